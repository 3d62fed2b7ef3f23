"""Minibatch SGD and local SGD trainers, step-size schedules and averages."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import Tracking, run_batch, sgd_substeps
from .errors import ConfigurationError, ContractViolation
from .problems import Dataset, ProblemInstance, empirical_risk
from .sampling import DrawRecord, StreamKey, derive_stream, draw_index_block, index_counts

# relative slack when comparing schedule constants against their admissibility limits
_ADMISSIBLE_RTOL = 1e-12

AVERAGE_SCHEMES = ("uniform", "tail", "local_all", "local_weighted")


@dataclass(frozen=True)
class StepSchedule:
    variant: str
    eta: Optional[float] = None
    a: Optional[float] = None
    mu: Optional[float] = None
    K: Optional[int] = None

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("Constant", eta=float(eta))

    @classmethod
    def poly_strong(cls, a: float, mu: float) -> "StepSchedule":
        return cls("PolyStrong", a=float(a), mu=float(mu))

    @classmethod
    def local_poly_strong(cls, a: float, mu: float, K: int) -> "StepSchedule":
        return cls("LocalPolyStrong", a=float(a), mu=float(mu), K=int(K))

    def validate(self, L: float) -> "StepSchedule":
        tol = 1 + _ADMISSIBLE_RTOL
        if self.variant == "Constant":
            if self.eta is None or not (0 < self.eta <= 2.0 / L * tol):
                raise ConfigurationError(f"constant step {self.eta} outside (0, 2/L] with L={L}")
        elif self.variant == "PolyStrong":
            if not (self.mu and self.mu > 0):
                raise ConfigurationError("PolyStrong needs mu > 0")
            if self.a * tol < 4.0 * L / self.mu:
                raise ConfigurationError(f"PolyStrong needs a >= 4L/mu = {4 * L / self.mu}, got {self.a}")
        elif self.variant == "LocalPolyStrong":
            if not (self.mu and self.mu > 0) or not (self.K and self.K >= 1):
                raise ConfigurationError("LocalPolyStrong needs mu > 0 and K >= 1")
            if self.a * tol < 2.0 * L / self.mu:
                raise ConfigurationError(f"LocalPolyStrong needs a >= 2L/mu = {2 * L / self.mu}, got {self.a}")
            if 4.0 / (self.mu * (self.a + 1)) > 2.0 / L * tol:
                raise ConfigurationError("LocalPolyStrong first step exceeds 2/L")
        else:
            raise ConfigurationError(f"unknown schedule variant {self.variant!r}")
        return self

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def schedule_eta(s: StepSchedule, r: int, t: int, global_t: int) -> float:
    """Step size at round ``r``, local step ``t``, global step ``global_t`` (1-based)."""
    if min(r, t, global_t) < 1:
        raise ContractViolation("schedule indices are 1-based")
    if s.variant == "Constant":
        return s.eta
    if s.variant == "PolyStrong":
        return 2.0 / (s.mu * (global_t + s.a))
    if s.variant == "LocalPolyStrong":
        return 4.0 / (s.mu * (s.a + (r - 1) * s.K + t))
    raise ConfigurationError(f"unknown schedule variant {s.variant!r}")


def eta_table(s: StepSchedule, R: int, K: int = 1) -> np.ndarray:
    """(R, K) table of step sizes; for K == 1 row r is step r of minibatch SGD."""
    out = np.empty((R, K))
    for r in range(1, R + 1):
        for t in range(1, K + 1):
            out[r - 1, t - 1] = schedule_eta(s, r, t, (r - 1) * K + t)
    return out


@dataclass
class MinibatchConfig:
    b: int
    R: int
    schedule: StepSchedule
    seed: int = 0
    log_every: int = 1

    def validate(self, L: Optional[float] = None) -> "MinibatchConfig":
        if self.b < 2:
            raise ConfigurationError("minibatch SGD assumes b >= 2")
        if self.R < 1 or self.log_every < 1:
            raise ConfigurationError("need R >= 1 and log_every >= 1")
        if L is not None:
            self.schedule.validate(L)
        return self

    @property
    def M(self) -> int:
        return self.b

    @property
    def K(self) -> int:
        return 1

    def to_dict(self) -> dict:
        return {"trainer": "minibatch", "b": self.b, "R": self.R, "schedule": self.schedule.to_dict(),
                "seed": self.seed, "log_every": self.log_every}


@dataclass
class LocalConfig:
    M: int
    K: int
    R: int
    schedule: StepSchedule
    seed: int = 0
    log_every: int = 1

    def validate(self, L: Optional[float] = None) -> "LocalConfig":
        if self.M < 1 or self.K < 1 or self.R < 1 or self.log_every < 1:
            raise ConfigurationError("need M, K, R, log_every >= 1")
        if self.schedule.variant == "LocalPolyStrong" and self.schedule.K != self.K:
            raise ConfigurationError("LocalPolyStrong K must match the config's K")
        if L is not None:
            self.schedule.validate(L)
        return self

    def to_dict(self) -> dict:
        return {"trainer": "local", "M": self.M, "K": self.K, "R": self.R,
                "schedule": self.schedule.to_dict(), "seed": self.seed, "log_every": self.log_every}


def trainer_name(cfg) -> str:
    return "minibatch" if isinstance(cfg, MinibatchConfig) else "local"


def block_shape(cfg) -> tuple:
    """Shape of one run's index block: (R, b) for minibatch, (R, M, K) for local."""
    if isinstance(cfg, MinibatchConfig):
        return (cfg.R, cfg.b)
    return (cfg.R, cfg.M, cfg.K)


def as_engine_block(cfg, block: np.ndarray) -> np.ndarray:
    """View a (..., R, b) or (..., R, M, K) block as (..., R, M, K)."""
    if isinstance(cfg, MinibatchConfig):
        return block[..., None]
    return block


def weight_offset(cfg) -> float:
    s = cfg.schedule
    return s.a if s.variant == "LocalPolyStrong" else 0.0


@dataclass
class Trajectory:
    final_w: np.ndarray
    logged_iterates: list = field(default_factory=list)   # (global step, w)
    risk_log: list = field(default_factory=list)          # (global step, F_S(w))
    grad_norm_log: list = field(default_factory=list)     # (global step, mean, max)
    draw_log: Optional[list] = None
    averages: dict = field(default_factory=dict)
    trainer: str = "minibatch"
    R: int = 0
    K: int = 1
    log_every: int = 1

    def to_jsonl(self) -> str:
        lines = []
        for (step, risk), (_, gmean, gmax) in zip(self.risk_log, self.grad_norm_log):
            lines.append(json.dumps({"step": step, "risk": risk, "grad_norm_mean": gmean,
                                     "grad_norm_max": gmax}))
        summary = {
            "summary": True,
            "trainer": self.trainer,
            "R": self.R,
            "K": self.K,
            "final_w": self.final_w.tolist(),
            "averages": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                         for k, v in self.averages.items()},
        }
        lines.append(json.dumps(summary))
        return "\n".join(lines) + "\n"


def minibatch_step(p: ProblemInstance, S: Dataset, w, draw: DrawRecord, eta: float) -> np.ndarray:
    """``w - (eta/b) sum_j grad f(w; z_{i_j})`` evaluated in index form."""
    if not eta > 0:
        raise ContractViolation("eta must be positive")
    w = p.check_w(w)
    idx = np.asarray(draw.indices, dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= S.n:
        raise ContractViolation("draw indices out of range")
    b = idx.size
    Wm = w[None, None, None, :]
    out = sgd_substeps(p.kind, p.reg, Wm, S.X[idx][None, None], S.y[idx][None, None], eta)
    return out.sum(2)[0, 0] / b


def minibatch_step_counts(p: ProblemInstance, S: Dataset, w, counts, eta: float) -> np.ndarray:
    """Count form ``w - (eta/b) sum_m alpha_m grad f(w; z_m)``."""
    from .problems import per_example_grad

    counts = np.asarray(counts, dtype=np.float64)
    g = per_example_grad(p.kind, p.reg, p.check_w(w), S.X, S.y)
    return w - eta / counts.sum() * (counts[:, None] * g).sum(0)


def _trajectory_from_result(p, S, cfg, res, block) -> Trajectory:
    R, K = cfg.R, cfg.K
    iters = res.iterates[0, 0]                 # (R + 1, d) round-start iterates
    keep = [r for r in range(R + 1) if r % cfg.log_every == 0 or r == R]
    logged, risks, gnorms = [], [], []
    for r in keep:
        step = r * K + 1
        w = iters[r].copy()
        logged.append((step, w))
        risks.append((step, empirical_risk(p, S, w)))
        gnorms.append((step, float(res.grad_norm_mean[0, r]), float(res.grad_norm_max[0, r])))
    if isinstance(cfg, MinibatchConfig):
        draws = [DrawRecord(t=r + 1, indices=block[r].copy(), counts=index_counts(block[r], S.n))
                 for r in range(R)]
    else:
        draws = [DrawRecord(t=r + 1, indices=block[r].ravel().copy(), counts=index_counts(block[r], S.n))
                 for r in range(R)]
    averages = {
        "uniform_bar_w_R": res.avg_uniform[0, 0],
        "tail_average": res.avg_tail[0, 0],
        "local_all_average": res.avg_local_all[0, 0],
        "local_weighted_average": res.avg_local_weighted[0, 0],
        "weight_sum": res.weight_sum,
    }
    return Trajectory(
        final_w=res.final[0, 0].copy(),
        logged_iterates=logged,
        risk_log=risks,
        grad_norm_log=gnorms,
        draw_log=draws,
        averages=averages,
        trainer=trainer_name(cfg),
        R=R,
        K=K,
        log_every=cfg.log_every,
    )


def draw_block_for(cfg, n: int, key: Optional[StreamKey] = None) -> np.ndarray:
    key = key if key is not None else StreamKey(cfg.seed, ("indices",))
    return draw_index_block(derive_stream(key), n, block_shape(cfg))


def run_trainer(p: ProblemInstance, S: Dataset, cfg, block: Optional[np.ndarray] = None) -> Trajectory:
    cfg.validate(p.L)
    if block is None:
        block = draw_block_for(cfg, S.n)
    etas = eta_table(cfg.schedule, cfg.R, cfg.K)
    res = run_batch(
        p.kind, p.reg, S.X[None], S.y[None], as_engine_block(cfg, block)[None], etas,
        weight_offset=weight_offset(cfg),
        track=Tracking(iterates=True, grad_norms=True),
    )
    return _trajectory_from_result(p, S, cfg, res, block)


def run_minibatch_sgd(p: ProblemInstance, S: Dataset, cfg: MinibatchConfig, block=None) -> Trajectory:
    """Minibatch SGD from w_1 = 0 with indices drawn with replacement."""
    if not isinstance(cfg, MinibatchConfig):
        raise ConfigurationError("run_minibatch_sgd needs a MinibatchConfig")
    return run_trainer(p, S, cfg, block)


def run_local_sgd(p: ProblemInstance, S: Dataset, cfg: LocalConfig, block=None) -> Trajectory:
    """Local SGD: M chains of K steps per round from a shared iterate, then average."""
    if not isinstance(cfg, LocalConfig):
        raise ConfigurationError("run_local_sgd needs a LocalConfig")
    return run_trainer(p, S, cfg, block)


def compute_averages(traj: Trajectory, scheme: str) -> np.ndarray:
    """Average of a trajectory's iterates.

    ``uniform`` and ``tail`` are recomputed from the logged round-start
    iterates and need ``log_every == 1``. The local schemes average over every
    per-machine iterate, which are folded in during the run.
    """
    if scheme not in AVERAGE_SCHEMES:
        raise ConfigurationError(f"unknown averaging scheme {scheme!r}")
    if scheme in ("uniform", "tail"):
        if traj.log_every != 1 or len(traj.logged_iterates) < traj.R:
            raise ContractViolation("exact averages need every iterate logged (log_every = 1)")
        ws = np.array([w for _, w in traj.logged_iterates[: traj.R]])
        if scheme == "tail":
            ws = ws[traj.R - math.ceil(traj.R / 2):]
        return ws.mean(axis=0)
    name = {"local_all": "local_all_average", "local_weighted": "local_weighted_average"}[scheme]
    if name not in traj.averages:
        raise ContractViolation(f"trajectory carries no {name}")
    return np.asarray(traj.averages[name])


def average_weights(scheme: str, R: int, M: int = 1, K: int = 1, a: float = 0.0) -> np.ndarray:
    """Normalised coefficients of an averaging scheme, shaped (R, M, K) or (R,)."""
    if scheme == "uniform":
        return np.full(R, 1.0 / R)
    if scheme == "tail":
        w = np.zeros(R)
        m = math.ceil(R / 2)
        w[R - m:] = 1.0 / m
        return w
    if scheme == "local_all":
        return np.full((R, M, K), 1.0 / (M * K * R))
    if scheme == "local_weighted":
        r = np.arange(1, R + 1)[:, None, None]
        t = np.arange(1, K + 1)[None, None, :]
        raw = np.broadcast_to(a + (r - 1) * K + t, (R, M, K)).astype(np.float64)
        S_R = raw[:, 0, :].sum()
        return raw / (M * S_R)
    raise ConfigurationError(f"unknown averaging scheme {scheme!r}")
