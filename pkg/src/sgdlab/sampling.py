"""Seeded random streams, with-replacement minibatch draws and index counts.

Streams are addressed by a :class:`StreamKey`: a master seed plus a path of
labels. The path is rendered as a slash-separated string, e.g.::

    rep/3/family/S

Path schema used by the trainers and experiments (stable, part of the public
contract):

    data                                   dataset draw of ``generate_dataset``
    family/S, family/S_prime               the two independent draws of a family
    teacher/<kind>/<d>/<decay>             planted model (master seed 0)
    rep/<r>/family                         replicate r's dataset family
    rep/<r>/subsample                      replicate r's replaced-index subset
    indices                                index stream of a standalone run
    rep/<r>/indices                        replicate r's index stream
    test/<chunk>                           Monte-Carlo test draws
    population/fit, population/eval/<c>    logistic optimum oracle (master seed 0)
    verify/...                             property-suite draws

An index stream is a single block drawn in (round, machine, step) C order, so
machine ``m``'s round-``r`` indices are ``block[r, m, :]``; a minibatch run
draws shape (R, b). Both trainers use the same label, so local SGD with K = 1
and minibatch SGD with b = M consume identical indices. Perturbed runs on
``S^(i)`` use the same key as the run on ``S`` (the dataset variant is
deliberately not part of the path), which is what couples them.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = [
    "StreamKey",
    "DrawRecord",
    "derive_stream",
    "draw_minibatch",
    "draw_index_block",
    "index_counts",
]


def _label_word(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        raise ContractViolation("boolean path labels are ambiguous")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ContractViolation(f"negative path label {label}")
        # ints and their decimal strings address the same stream
        label = str(int(label))
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.master_seed < 0:
            raise ContractViolation("master_seed must be non-negative")
        object.__setattr__(self, "path", tuple(self.path))

    def child(self, *labels) -> "StreamKey":
        return StreamKey(self.master_seed, self.path + tuple(labels))

    def __str__(self) -> str:
        return "/".join(str(p) for p in self.path)

    @classmethod
    def parse(cls, master_seed: int, path: str) -> "StreamKey":
        parts = tuple(p for p in path.split("/") if p)
        return cls(master_seed, tuple(int(p) if p.isdigit() else p for p in parts))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.master_seed),
            spawn_key=tuple(_label_word(p) for p in self.path),
        )


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``key``; pure function of the key."""
    return np.random.Generator(np.random.Philox(key.seed_sequence()))


@dataclass
class DrawRecord:
    t: int
    indices: np.ndarray
    counts: np.ndarray


def index_counts(indices, n: int) -> np.ndarray:
    """Multiplicity of each of ``0..n-1`` in ``indices``."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractViolation(f"index out of range [0, {n})")
    return np.bincount(idx, minlength=n).astype(np.int64)


def draw_minibatch(n: int, b: int, stream: np.random.Generator, t: int = 0) -> DrawRecord:
    """Draw ``b`` indices uniformly with replacement from ``[0, n)``."""
    if n < 1 or b < 1:
        raise ContractViolation("need n >= 1 and b >= 1")
    indices = stream.integers(0, n, size=b, dtype=np.int64)
    return DrawRecord(t=t, indices=indices, counts=index_counts(indices, n))


def draw_index_block(stream: np.random.Generator, n: int, shape) -> np.ndarray:
    """All indices for one run, drawn in a single call (C order)."""
    if n < 1:
        raise ContractViolation("need n >= 1")
    return stream.integers(0, n, size=tuple(shape), dtype=np.int64)
