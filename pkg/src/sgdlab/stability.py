"""Neighbouring datasets and Monte-Carlo estimates of on-average model stability.

Runs on ``S`` and on ``S^(i)`` share their index stream (the variant is not
part of the stream path), so they differ only through the replaced example.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import Tracking, run_batch
from .errors import ConfigurationError, ContractViolation
from .optimizers import (
    LocalConfig,
    MinibatchConfig,
    Trajectory,
    as_engine_block,
    block_shape,
    draw_block_for,
    eta_table,
    run_trainer,
    trainer_name,
    weight_offset,
)
from .problems import Dataset, GeneratorSpec, ProblemInstance, draw_examples, per_example_loss
from .sampling import StreamKey, derive_stream, draw_index_block

OUTPUTS = ("final", "uniform", "tail", "local_all", "local_weighted")
DEFAULT_CHUNK = 8


@dataclass
class NeighborFamily:
    S: Dataset
    S_prime: Dataset

    def __post_init__(self):
        if self.S.X.shape != self.S_prime.X.shape:
            raise ContractViolation("S and S_prime must have the same shape")

    @property
    def n(self) -> int:
        return self.S.n

    def variant(self, i: int) -> Dataset:
        """S with example i replaced by S_prime[i]."""
        if not 0 <= i < self.n:
            raise ContractViolation(f"index {i} out of range [0, {self.n})")
        X = self.S.X.copy()
        y = self.S.y.copy()
        X[i] = self.S_prime.X[i]
        y[i] = self.S_prime.y[i]
        return Dataset(X, y)


def make_neighbors(spec: GeneratorSpec, seed: int, key: Optional[StreamKey] = None) -> NeighborFamily:
    """S and S' drawn from independent streams of the same spec."""
    spec.validate()
    key = key if key is not None else StreamKey(seed, ("family",))
    S = draw_examples(spec, key.child("S"))
    S_prime = draw_examples(spec, key.child("S_prime"))
    return NeighborFamily(S, S_prime)


def coupled_pair_run(p: ProblemInstance, family: NeighborFamily, i: int, trainer_cfg,
                     block: Optional[np.ndarray] = None) -> tuple[Trajectory, Trajectory]:
    """Train on S and on S^(i) with the same index stream."""
    if block is None:
        block = draw_block_for(trainer_cfg, family.n)
    return (run_trainer(p, family.S, trainer_cfg, block),
            run_trainer(p, family.variant(i), trainer_cfg, block))


@dataclass
class StabilityEstimate:
    l1: float
    l2_sq: float
    l1_se: float
    l2_sq_se: float
    n_replicates: int
    n_indices_sampled: int
    coupling: str = "shared_path"
    output: str = "final"
    trainer: dict = field(default_factory=dict)
    n: int = 0
    per_replicate_l1: Optional[np.ndarray] = None
    per_replicate_l2_sq: Optional[np.ndarray] = None
    # replicate means along the run on S, shaped (R, K, M); minibatch has K = 1 and M = b copies
    risk_mean: Optional[np.ndarray] = None
    sqrt_risk_mean: Optional[np.ndarray] = None
    distance_mean: Optional[np.ndarray] = None      # (R,) mean ||w_{r+1} - w_{r+1}^(i)||
    etas: Optional[np.ndarray] = None               # (R, K)
    path_grad_sq_sum: Optional[float] = None        # sum_m E[(sum_k eta_k ||grad f(w_k; z_m)||)^2]
    path_loss_sq_sum: Optional[float] = None        # sum_m E[(sum_k eta_k f(w_k; z_m))^2]
    frak_c_sq_sum: Optional[float] = None           # sum_k E[(sum eta * frak_c)^2], scaled from the subsample
    sigma2: Optional[float] = None
    G: Optional[float] = None
    train_risk_out: Optional[np.ndarray] = None     # F_S(A(S)) per replicate
    outputs: Optional[np.ndarray] = None            # A(S) per replicate
    bounds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v

        out = {k: conv(v) for k, v in self.__dict__.items() if k not in ("bounds", "outputs")}
        out["bounds"] = [b.to_dict() for b in self.bounds]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _select_output(res, output):
    return {
        "final": res.final,
        "uniform": res.avg_uniform,
        "tail": res.avg_tail,
        "local_all": res.avg_local_all,
        "local_weighted": res.avg_local_weighted,
    }[output]


def _replicate_inputs(spec, cfg, r, index_subsample, same_prime):
    master = cfg.seed
    fam = make_neighbors(spec, master, StreamKey(master, ("rep", r, "family")))
    Sp = fam.S if same_prime else fam.S_prime
    m = min(spec.n, index_subsample)
    I = derive_stream(StreamKey(master, ("rep", r, "subsample"))).choice(spec.n, size=m, replace=False)
    block = draw_index_block(derive_stream(StreamKey(master, ("rep", r, "indices"))), spec.n, block_shape(cfg))
    return fam.S, Sp, np.asarray(I, dtype=np.int64), block


def _run_chunk(p, spec, cfg, reps, index_subsample, output, track, same_prime):
    parts = [_replicate_inputs(spec, cfg, r, index_subsample, same_prime) for r in reps]
    X = np.stack([q[0].X for q in parts])
    y = np.stack([q[0].y for q in parts])
    Xp = np.stack([q[1].X for q in parts])
    yp = np.stack([q[1].y for q in parts])
    repl = np.stack([np.concatenate([[-1], q[2]]) for q in parts])
    block = np.stack([as_engine_block(cfg, q[3]) for q in parts])
    res = run_batch(
        p.kind, p.reg, X, y, block, eta_table(cfg.schedule, cfg.R, cfg.K),
        Xp=Xp, yp=yp, repl=repl, weight_offset=weight_offset(cfg), track=track,
    )
    out = _select_output(res, output)
    diff = out[:, 1:] - out[:, :1]
    sq = (diff * diff).sum(-1)
    base = out[:, 0]
    train = per_example_loss(p.kind, p.reg, base[:, None, :], X, y).mean(-1)
    return res, np.sqrt(sq), sq, base, train


def estimate_on_average_stability(
    p: ProblemInstance,
    spec: GeneratorSpec,
    trainer_cfg,
    n_replicates: int = 64,
    index_subsample: int = 32,
    *,
    output: str = "final",
    track: Optional[Tracking] = None,
    threads: int = 1,
    chunk: int = DEFAULT_CHUNK,
    same_prime: bool = False,
) -> StabilityEstimate:
    """Estimate l1 and l2 on-average model stability from coupled runs.

    Each replicate draws a fresh family, a uniform index subset ``I`` (without
    replacement) and one index stream; ``A(S)`` and every ``A(S^(i))``,
    ``i in I``, consume that stream. ``same_prime`` sets ``S' = S``.
    """
    if n_replicates < 2:
        raise ConfigurationError("n_replicates must be >= 2 for a standard error")
    if index_subsample < 1:
        raise ConfigurationError("index_subsample must be >= 1")
    if output not in OUTPUTS:
        raise ConfigurationError(f"unknown output {output!r}")
    trainer_cfg.validate(p.L)
    if spec.kind != p.kind or spec.d != p.d:
        raise ConfigurationError("spec does not match the problem instance")
    if track is None:
        track = Tracking(risk=True, distance=True)
    chunks = [list(range(s, min(s + chunk, n_replicates))) for s in range(0, n_replicates, chunk)]

    def work(reps):
        return _run_chunk(p, spec, trainer_cfg, reps, index_subsample, output, track, same_prime)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    l1_r = np.concatenate([r[1].mean(-1) for r in results])
    l2_r = np.concatenate([r[2].mean(-1) for r in results])
    engines = [r[0] for r in results]
    n = spec.n
    m = min(n, index_subsample)
    est = StabilityEstimate(
        l1=float(l1_r.mean()),
        l2_sq=float(l2_r.mean()),
        l1_se=float(l1_r.std(ddof=1) / math.sqrt(n_replicates)),
        l2_sq_se=float(l2_r.std(ddof=1) / math.sqrt(n_replicates)),
        n_replicates=n_replicates,
        n_indices_sampled=m,
        output=output,
        trainer=trainer_cfg.to_dict(),
        n=n,
        per_replicate_l1=l1_r,
        per_replicate_l2_sq=l2_r,
        etas=eta_table(trainer_cfg.schedule, trainer_cfg.R, trainer_cfg.K),
        train_risk_out=np.concatenate([r[4] for r in results]),
        outputs=np.concatenate([r[3] for r in results]),
    )
    if track.risk:
        risk = np.concatenate([e.risk for e in engines])
        est.risk_mean = risk.mean(0)
        est.sqrt_risk_mean = np.sqrt(risk).mean(0)
    if track.distance:
        est.distance_mean = np.concatenate([e.distance[:, 1:] for e in engines]).mean((0, 1))
    if track.paths:
        est.path_grad_sq_sum = float(np.concatenate([(e.path_grad**2).sum(-1) for e in engines]).mean())
        est.path_loss_sq_sum = float(np.concatenate([(e.path_loss**2).sum(-1) for e in engines]).mean())
    if track.frak_c:
        c = np.concatenate([e.frak_c[:, 1:] for e in engines])
        est.frak_c_sq_sum = float(n * (c**2).mean())
    if track.variance:
        est.sigma2 = float(max(e.sigma2.max() for e in engines))
        est.G = float(max(e.gmax.max() for e in engines))
    return est


def uniform_stability_probe(
    p: ProblemInstance,
    S: Dataset,
    S_prime: Dataset,
    trainer_cfg,
    probe_set: Dataset,
    n_replicates: int = 16,
) -> float:
    """Max over probe points of the mean loss difference between A(S) and A(S').

    This is a lower bound on the uniform-stability supremum: it looks at one
    neighbouring pair and finitely many test points only.
    """
    if probe_set.n < 1:
        raise ConfigurationError("probe_set must be nonempty")
    trainer_cfg.validate(p.L)
    if S.X.shape != S_prime.X.shape:
        raise ContractViolation("S and S' must have the same shape")
    master = trainer_cfg.seed
    blocks = np.stack([
        as_engine_block(trainer_cfg, draw_index_block(
            derive_stream(StreamKey(master, ("rep", r, "indices"))), S.n, block_shape(trainer_cfg)))
        for r in range(n_replicates)
    ])
    etas = eta_table(trainer_cfg.schedule, trainer_cfg.R, trainer_cfg.K)
    outs = []
    for data in (S, S_prime):
        X = np.broadcast_to(data.X, (n_replicates,) + data.X.shape)
        y = np.broadcast_to(data.y, (n_replicates,) + data.y.shape)
        res = run_batch(p.kind, p.reg, X, y, blocks, etas, weight_offset=weight_offset(trainer_cfg))
        outs.append(res.final[:, 0])
    la = per_example_loss(p.kind, p.reg, outs[0][:, None, :], probe_set.X[None], probe_set.y[None])
    lb = per_example_loss(p.kind, p.reg, outs[1][:, None, :], probe_set.X[None], probe_set.y[None])
    return float(np.abs((la - lb).mean(0)).max())
