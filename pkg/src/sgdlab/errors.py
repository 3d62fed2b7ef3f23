"""Exception types shared across the package."""


class SgdLabError(Exception):
    pass


class ConfigurationError(SgdLabError, ValueError):
    """Invalid user-supplied configuration (bad spec, inadmissible schedule, ...)."""


class ContractViolation(SgdLabError, ValueError):
    """A caller broke a precondition (dimension mismatch, out-of-range index, ...)."""


class UnsupportedOperation(SgdLabError, TypeError):
    """Operation is not defined for this kind of input."""


class MissingInputError(SgdLabError, KeyError):
    """A bound formula referenced an input that was not supplied."""

    def __init__(self, name: str, theorem_id: str = ""):
        self.name = name
        self.theorem_id = theorem_id
        where = f" for {theorem_id}" if theorem_id else ""
        super().__init__(f"missing input {name!r}{where}")

    def __str__(self) -> str:
        return self.args[0]
