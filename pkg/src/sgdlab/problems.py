"""Synthetic learning problems with exactly known constants.

Features are drawn as ``x = x_cap * z / ||z||`` with ``z ~ N(0, diag(j^-decay))``
(``j = 1..d``), so every feature vector has norm exactly ``x_cap``. With
``decay = 0`` this is the uniform distribution on the sphere (isotropic);
``decay > 0`` gives a power-law feature spectrum. Because ``||x|| = x_cap`` the
per-example smoothness constant is known in closed form, and the second-moment
matrix ``E[x x^T]`` is diagonal and computed by one-dimensional quadrature, so
population risks of the quadratic problems are exact.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, ContractViolation, UnsupportedOperation
from .sampling import StreamKey, derive_stream

KINDS = ("LeastSquares", "Logistic", "RidgeLeastSquares", "QuadraticPL")
QUADRATIC_KINDS = ("LeastSquares", "RidgeLeastSquares", "QuadraticPL")


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y: float


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ContractViolation("Dataset needs X of shape (n, d) and y of shape (n,)")
        if self.X.shape[0] < 1:
            raise ContractViolation("Dataset must hold at least one example")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ContractViolation("Dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Example:
        return Example(self.X[i], float(self.y[i]))

    @property
    def examples(self) -> list:
        return [self[i] for i in range(self.n)]

    @classmethod
    def from_examples(cls, examples) -> "Dataset":
        X = np.array([np.atleast_1d(np.asarray(z.x, dtype=np.float64)) for z in examples])
        y = np.array([z.y for z in examples], dtype=np.float64)
        return cls(X, y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{j}" for j in range(self.d)] + ["y"])
        for xi, yi in zip(self.X, self.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        d = len(header) - 1
        if header != [f"x_{j}" for j in range(d)] + ["y"]:
            raise ContractViolation(f"unexpected CSV header {header}")
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        return cls(arr[:, :d], arr[:, d])


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    d: int
    n: int
    noise_level: float = 0.0
    x_cap: float = 1.0
    seed: int = 0
    reg: float = 0.0
    decay: float = 0.0

    def validate(self) -> "GeneratorSpec":
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigurationError("d must be an integer >= 1")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError("n must be an integer >= 1")
        if not self.noise_level >= 0:
            raise ConfigurationError("noise_level must be >= 0")
        if not self.x_cap > 0:
            raise ConfigurationError("x_cap must be > 0")
        if not self.reg >= 0:
            raise ConfigurationError("reg must be >= 0")
        if not self.decay >= 0:
            raise ConfigurationError("decay must be >= 0")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        if self.kind == "RidgeLeastSquares" and self.reg <= 0:
            raise ConfigurationError("RidgeLeastSquares needs reg > 0")
        if self.kind in ("LeastSquares", "QuadraticPL") and self.reg != 0:
            raise ConfigurationError(f"{self.kind} takes no ridge term; use RidgeLeastSquares")
        if self.kind == "QuadraticPL" and self.d <= self.n:
            raise ConfigurationError("QuadraticPL needs d > n (rank-deficient Hessian)")
        return self

    def with_(self, **kw) -> "GeneratorSpec":
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        obj = json.loads(text)
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "GeneratorSpec":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigurationError(f"unknown GeneratorSpec field(s): {sorted(unknown)}")
        return cls(**obj).validate()


@dataclass
class ProblemInstance:
    kind: str
    d: int
    L: float
    mu: float
    reg: float = 0.0
    teacher_w: Optional[np.ndarray] = None
    noise_level: float = 0.0
    grad_cap_G: Optional[float] = None
    x_cap: float = 1.0
    decay: float = 0.0
    second_moment: Optional[np.ndarray] = field(default=None, repr=False)

    def check_w(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1:] != (self.d,):
            raise ContractViolation(f"expected w of dimension {self.d}, got shape {w.shape}")
        return w

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "L": self.L,
            "mu": self.mu,
            "reg": self.reg,
            "noise_level": self.noise_level,
            "x_cap": self.x_cap,
            "decay": self.decay,
            "grad_cap_G": self.grad_cap_G,
        }


# --------------------------------------------------------------------------
# vectorised losses and gradients; W broadcasts against X[..., :]


def per_example_loss(kind: str, reg: float, W, X, y) -> np.ndarray:
    m = (X * W).sum(-1)
    if kind == "Logistic":
        out = np.logaddexp(0.0, -y * m)
    else:
        r = m - y
        out = 0.5 * (r * r)
    if reg:
        out = out + 0.5 * reg * (W * W).sum(-1)
    return out


def per_example_grad(kind: str, reg: float, W, X, y) -> np.ndarray:
    m = (X * W).sum(-1)
    if kind == "Logistic":
        coef = -y * special.expit(-y * m)
    else:
        coef = m - y
    g = coef[..., None] * X
    if reg:
        g = g + reg * W
    return g


def loss_value(p: ProblemInstance, w, z: Example) -> float:
    w = p.check_w(w)
    x = np.asarray(z.x, dtype=np.float64)
    if x.shape != (p.d,):
        raise ContractViolation(f"example has dimension {x.shape}, problem has {p.d}")
    return float(per_example_loss(p.kind, p.reg, w, x, float(z.y)))


def loss_grad(p: ProblemInstance, w, z: Example) -> np.ndarray:
    w = p.check_w(w)
    x = np.asarray(z.x, dtype=np.float64)
    if x.shape != (p.d,):
        raise ContractViolation(f"example has dimension {x.shape}, problem has {p.d}")
    return per_example_grad(p.kind, p.reg, w, x, float(z.y))


def empirical_risk(p: ProblemInstance, S: Dataset, w) -> float:
    """Mean loss over ``S``, summed left to right."""
    w = p.check_w(w)
    losses = per_example_loss(p.kind, p.reg, w, S.X, S.y)
    total = 0.0
    for v in losses.tolist():
        total += v
    return total / S.n


def empirical_gradient(p: ProblemInstance, S: Dataset, w) -> np.ndarray:
    w = p.check_w(w)
    return per_example_grad(p.kind, p.reg, w, S.X, S.y).mean(axis=0)


# --------------------------------------------------------------------------
# feature distribution


def _spectrum(d: int, decay: float) -> np.ndarray:
    return np.arange(1, d + 1, dtype=np.float64) ** (-float(decay))


@lru_cache(maxsize=64)
def _normalized_second_moment(d: int, decay: float) -> tuple:
    """E[z_j^2 / ||z||^2] for z ~ N(0, diag(lam)).

    Uses 1/Q = int_0^inf exp(-tQ) dt, which gives
    lam_j * int_0^inf (1 + 2 t lam_j)^-1 prod_k (1 + 2 t lam_k)^-1/2 dt.
    """
    if decay == 0:
        return tuple([1.0 / d] * d)
    lam = _spectrum(d, decay)

    def log_prod(t):
        return -0.5 * np.log1p(2.0 * t * lam).sum()

    out = []
    for lj in lam:
        val, _ = integrate.quad(
            lambda t, lj=lj: lj * math.exp(log_prod(t)) / (1.0 + 2.0 * t * lj),
            0.0,
            np.inf,
            epsabs=1e-13,
            epsrel=1e-11,
            limit=400,
        )
        out.append(val)
    s = np.array(out)
    # the entries sum to one exactly; remove the residual quadrature error
    return tuple((s / s.sum()).tolist())


def feature_second_moment(d: int, decay: float, x_cap: float) -> np.ndarray:
    return x_cap**2 * np.array(_normalized_second_moment(int(d), float(decay)))


def draw_features(rng: np.random.Generator, n: int, d: int, decay: float, x_cap: float) -> np.ndarray:
    z = rng.standard_normal((n, d)) * np.sqrt(_spectrum(d, decay))
    norms = np.sqrt((z * z).sum(axis=1))
    # measure-zero event, but keep the norm invariant if it happens
    norms[norms == 0] = 1.0
    return x_cap * z / norms[:, None]


@lru_cache(maxsize=64)
def _teacher(kind: str, d: int, decay: float) -> tuple:
    rng = derive_stream(StreamKey(0, ("teacher", kind, d, repr(float(decay)))))
    if decay > 0:
        # power-law features: random signs and w_j^2 ~ 1/j whatever the decay, which
        # puts equal teacher mass per octave of the spectrum
        w = np.where(rng.random(d) < 0.5, -1.0, 1.0) * np.sqrt(_spectrum(d, 1.0))
    else:
        w = rng.standard_normal(d)
    return tuple((w / np.linalg.norm(w)).tolist())


def teacher_for(spec: GeneratorSpec) -> np.ndarray:
    return np.array(_teacher(spec.kind, int(spec.d), float(spec.decay)))


def draw_examples(spec: GeneratorSpec, key: StreamKey, n: Optional[int] = None) -> Dataset:
    """Draw ``n`` (default ``spec.n``) examples from the spec's distribution."""
    n = spec.n if n is None else int(n)
    rng = derive_stream(key)
    X = draw_features(rng, n, spec.d, spec.decay, spec.x_cap)
    t = teacher_for(spec)
    margin = X @ t
    if spec.kind == "Logistic":
        if spec.noise_level > 0:
            p_pos = special.expit(margin / spec.noise_level)
            y = np.where(rng.random(n) < p_pos, 1.0, -1.0)
        else:
            y = np.where(margin >= 0, 1.0, -1.0)
    else:
        y = margin + spec.noise_level * rng.standard_normal(n)
    return Dataset(X, y)


def smoothness_constant(spec: GeneratorSpec) -> float:
    if spec.kind == "Logistic":
        return spec.x_cap**2 / 4.0 + spec.reg
    return spec.x_cap**2 + spec.reg


def smallest_positive_eigenvalue(S: Dataset, rel_tol: float = 1e-10) -> float:
    """lambda_min^+ of (1/n) X^T X, via the n x n Gram matrix when n < d."""
    X = S.X
    if S.n < S.d:
        ev = np.linalg.eigvalsh(X @ X.T / S.n)
    else:
        ev = np.linalg.eigvalsh(X.T @ X / S.n)
    pos = ev[ev > rel_tol * max(ev.max(), 1e-300)]
    return float(pos.min()) if pos.size else 0.0


def make_instance(spec: GeneratorSpec, S: Optional[Dataset] = None) -> ProblemInstance:
    spec.validate()
    if spec.kind == "QuadraticPL":
        if S is None:
            raise ConfigurationError("QuadraticPL's mu depends on the dataset; pass S")
        mu = smallest_positive_eigenvalue(S)
    elif spec.kind in ("RidgeLeastSquares", "Logistic"):
        mu = spec.reg
    else:
        mu = 0.0
    return ProblemInstance(
        kind=spec.kind,
        d=spec.d,
        L=smoothness_constant(spec),
        mu=mu,
        reg=spec.reg,
        teacher_w=teacher_for(spec),
        noise_level=spec.noise_level,
        x_cap=spec.x_cap,
        decay=spec.decay,
        second_moment=feature_second_moment(spec.d, spec.decay, spec.x_cap),
    )


def generate_dataset(spec: GeneratorSpec) -> tuple[Dataset, ProblemInstance]:
    spec.validate()
    S = draw_examples(spec, StreamKey(spec.seed, ("data",)))
    return S, make_instance(spec, S)


def spec_of(p: ProblemInstance, n: int, seed: int = 0) -> GeneratorSpec:
    return GeneratorSpec(
        kind=p.kind, d=p.d, n=n, noise_level=p.noise_level, x_cap=p.x_cap,
        seed=seed, reg=p.reg, decay=p.decay,
    )


# --------------------------------------------------------------------------
# population quantities


def population_risk_estimate(p: ProblemInstance, test_spec: GeneratorSpec, w, N_test: int, seed: int):
    """Monte-Carlo mean and standard error of the population risk at ``w``."""
    if N_test < 2:
        raise ConfigurationError("N_test must be >= 2")
    same = (
        test_spec.kind == p.kind and test_spec.d == p.d and test_spec.noise_level == p.noise_level
        and test_spec.x_cap == p.x_cap and test_spec.decay == p.decay and test_spec.reg == p.reg
    )
    if not same:
        raise ConfigurationError("test_spec does not describe the problem's distribution")
    w = p.check_w(w)
    losses = np.empty(N_test)
    chunk = 1 << 16
    for start in range(0, N_test, chunk):
        m = min(chunk, N_test - start)
        T = draw_examples(test_spec, StreamKey(seed, ("test", start // chunk)), n=m)
        losses[start:start + m] = per_example_loss(p.kind, p.reg, w, T.X, T.y)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(N_test))


def population_risk(p: ProblemInstance, w) -> float:
    """Exact population risk for the quadratic kinds."""
    if p.kind not in QUADRATIC_KINDS:
        raise UnsupportedOperation(f"exact population risk is not available for {p.kind}")
    w = p.check_w(w)
    diff = w - p.teacher_w
    val = 0.5 * float((p.second_moment * diff * diff).sum()) + 0.5 * p.noise_level**2
    if p.reg:
        val += 0.5 * p.reg * float(w @ w)
    return val


@lru_cache(maxsize=16)
def _logistic_optimum(kind, d, noise_level, x_cap, reg, decay, n_fit, n_eval):
    spec = GeneratorSpec(kind, d, 2, noise_level, x_cap, 0, reg, decay)
    T = draw_examples(spec, StreamKey(0, ("population", "fit")), n=n_fit)
    w = np.zeros(d)
    for _ in range(50):
        m = T.X @ w
        s = special.expit(-T.y * m)
        g = -(T.X * (T.y * s)[:, None]).mean(0) + reg * w
        h = (T.X * (s * (1 - s))[:, None]).T @ T.X / T.n + (reg + 1e-12) * np.eye(d)
        step = np.linalg.solve(h, g)
        w = w - step
        if np.linalg.norm(step) < 1e-12:
            break
    vals = []
    chunk = 1 << 16
    for start in range(0, n_eval, chunk):
        m = min(chunk, n_eval - start)
        E = draw_examples(spec, StreamKey(0, ("population", "eval", start // chunk)), n=m)
        vals.append(per_example_loss(kind, reg, w, E.X, E.y))
    vals = np.concatenate(vals)
    return tuple(w.tolist()), float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_eval))


def population_minimizer(p: ProblemInstance) -> np.ndarray:
    if p.kind in ("LeastSquares", "QuadraticPL"):
        return p.teacher_w.copy()
    if p.kind == "RidgeLeastSquares":
        s = p.second_moment
        return s / (s + p.reg) * p.teacher_w
    w, _, _ = _logistic_optimum(p.kind, p.d, p.noise_level, p.x_cap, p.reg, p.decay, 200_000, 1_000_000)
    return np.array(w)


def optimal_risk(p: ProblemInstance) -> tuple[float, float]:
    """F(w*) and its standard error (0 when exact)."""
    if p.kind in QUADRATIC_KINDS:
        return population_risk(p, population_minimizer(p)), 0.0
    _, f, se = _logistic_optimum(p.kind, p.d, p.noise_level, p.x_cap, p.reg, p.decay, 200_000, 1_000_000)
    return f, se


def empirical_minimizer(p: ProblemInstance, S: Dataset) -> np.ndarray:
    """Exact minimiser of F_S via the normal equations (minimum norm if singular)."""
    if p.kind not in QUADRATIC_KINDS:
        raise UnsupportedOperation(f"no closed-form empirical minimiser for {p.kind}")
    if p.reg:
        A = S.X.T @ S.X / S.n + p.reg * np.eye(p.d)
        return np.linalg.solve(A, S.X.T @ S.y / S.n)
    w, *_ = np.linalg.lstsq(S.X, S.y, rcond=None)
    return w


def gradient_cap(p: ProblemInstance, ws, X, y, max_pairs: int = 10_000, seed: int = 0) -> float:
    """Measured surrogate for G: max ||grad f(w; z)|| over a probe of (w, z) pairs."""
    ws = np.atleast_2d(np.asarray(ws, dtype=np.float64))
    X = np.atleast_2d(X)
    y = np.atleast_1d(y)
    total = ws.shape[0] * X.shape[0]
    if total <= max_pairs:
        G = per_example_grad(p.kind, p.reg, ws[:, None, :], X[None], y[None])
        return float(np.sqrt((G * G).sum(-1)).max())
    rng = derive_stream(StreamKey(seed, ("gradient_cap",)))
    iw = rng.integers(0, ws.shape[0], size=max_pairs)
    iz = rng.integers(0, X.shape[0], size=max_pairs)
    G = per_example_grad(p.kind, p.reg, ws[iw], X[iz], y[iz])
    return float(np.sqrt((G * G).sum(-1)).max())
