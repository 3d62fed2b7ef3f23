"""Runnable property and inequality suites behind ``sgdlab verify``.

Each check returns a :class:`SuiteCheck` with a verdict; the exact and
reduction suites are deterministic, the inequality suite is Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import strong_weights
from .engine import run_batch
from .experiments import (
    Verdict,
    check_gen_pl,
    check_opt_mb_convex,
    stability_bound_checks,
)
from .optimizers import (
    LocalConfig,
    MinibatchConfig,
    StepSchedule,
    draw_block_for,
    minibatch_step,
    minibatch_step_counts,
    run_local_sgd,
    run_minibatch_sgd,
)
from .problems import (
    Example,
    GeneratorSpec,
    draw_examples,
    generate_dataset,
    loss_grad,
    loss_value,
    make_instance,
    per_example_grad,
    per_example_loss,
)
from .sampling import DrawRecord, StreamKey, derive_stream, draw_minibatch, index_counts
from .stability import estimate_on_average_stability

SUITES = ("exact", "reduction", "inequality", "all")
SLACK = 1e-10


@dataclass
class SuiteCheck:
    suite: str
    name: str
    verdict: Verdict
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name, "verdict": self.verdict.value, "detail": self.detail}


def _v(ok: bool) -> Verdict:
    return Verdict.HOLDS if ok else Verdict.VIOLATED


def _random_points(rng, d, count, scale=2.0):
    return rng.normal(size=(count, d)) * scale / math.sqrt(d)


def _operator_pairs(spec: GeneratorSpec, eta_frac: float, count: int, seed: int):
    """Gradient-step images of random pairs (w, w') at random examples."""
    S, p = generate_dataset(spec)
    rng = derive_stream(StreamKey(seed, ("verify", spec.kind)))
    W, Wp = _random_points(rng, p.d, count), _random_points(rng, p.d, count)
    idx = rng.integers(0, S.n, size=count)
    eta = eta_frac / p.L
    X, y = S.X[idx], S.y[idx]
    G = W - eta * per_example_grad(p.kind, p.reg, W[:, None, :], X[:, None, :], y[:, None])[:, 0]
    Gp = Wp - eta * per_example_grad(p.kind, p.reg, Wp[:, None, :], X[:, None, :], y[:, None])[:, 0]
    return p, eta, np.linalg.norm(G - Gp, axis=1), np.linalg.norm(W - Wp, axis=1)


def exact_suite(seed: int = 0, count: int = 2000) -> list:
    out = []
    # gradient steps are nonexpansive for convex smooth losses at eta <= 2/L
    for kind, reg in (("LeastSquares", 0.0), ("Logistic", 0.0), ("RidgeLeastSquares", 0.1)):
        spec = GeneratorSpec(kind, 8, 64, noise_level=0.5, reg=reg, seed=seed)
        _, _, num, den = _operator_pairs(spec, 2.0, count, seed)
        worst = float((num - den).max())
        out.append(SuiteCheck("exact", f"nonexpansive/{kind}", _v(worst <= SLACK), {"max_excess": worst}))
    # contraction factors under mu-strong convexity at eta <= 1/L
    spec = GeneratorSpec("RidgeLeastSquares", 8, 64, noise_level=0.5, reg=0.3, seed=seed)
    p, eta, num, den = _operator_pairs(spec, 1.0, count, seed)
    lin = float((num - (1 - eta * p.mu / 2) * den).max())
    sq = float((num**2 - (1 - eta * p.mu) * den**2).max())
    out.append(SuiteCheck("exact", "contraction/linear", _v(lin <= SLACK), {"max_excess": lin}))
    out.append(SuiteCheck("exact", "contraction/squared", _v(sq <= SLACK), {"max_excess": sq}))
    # self-bounding: ||grad f||^2 <= 2 L f
    for kind, reg in (("LeastSquares", 0.0), ("Logistic", 0.0), ("RidgeLeastSquares", 0.1)):
        S, p = generate_dataset(GeneratorSpec(kind, 8, 64, noise_level=0.5, reg=reg, seed=seed))
        rng = derive_stream(StreamKey(seed, ("verify", "selfbound", kind)))
        W = _random_points(rng, p.d, count, scale=4.0)[:, None, :]
        g = per_example_grad(p.kind, p.reg, W, S.X[None], S.y[None])
        f = per_example_loss(p.kind, p.reg, W, S.X[None], S.y[None])
        worst = float(((g**2).sum(-1) - 2 * p.L * f).max())
        out.append(SuiteCheck("exact", f"self_bounding/{kind}", _v(worst <= SLACK), {"max_excess": worst}))
    out.append(binomial_moment_check(seed=seed))
    # index form and count form of the minibatch step agree
    S, p = generate_dataset(GeneratorSpec("Logistic", 8, 32, noise_level=0.5, seed=seed))
    rng = derive_stream(StreamKey(seed, ("verify", "reform")))
    worst = 0.0
    for t in range(50):
        w = _random_points(rng, p.d, 1)[0]
        draw = draw_minibatch(S.n, 6, rng, t)
        a = minibatch_step(p, S, w, draw, 0.5 / p.L)
        b = minibatch_step_counts(p, S, w, draw.counts, 0.5 / p.L)
        worst = max(worst, float(np.abs(a - b).max()))
    out.append(SuiteCheck("exact", "reformulation", _v(worst <= SLACK), {"max_abs_diff": worst}))
    # (mu/2) sum_k eta_k prod_{k'>k} (1 - mu eta_k'/2) = 1 - prod_k (1 - mu eta_k/2)
    worst = 0.0
    for mu, a, T in ((0.5, 8.0, 100), (1.0, 4.0, 1000), (0.05, 80.0, 500)):
        eta = 2.0 / (mu * (np.arange(1, T + 1) + a))
        lhs = mu / 2 * float(np.sum(eta * strong_weights(eta, mu)))
        rhs = 1 - float(np.prod(1 - mu * eta / 2))
        worst = max(worst, abs(lhs - rhs))
    out.append(SuiteCheck("exact", "weight_identity", _v(worst <= 1e-12), {"max_abs_diff": worst}))
    return out


def binomial_moment_check(n: int = 50, b: int = 8, draws: int = 100_000, seed: int = 0) -> SuiteCheck:
    """Count of one index in a with-replacement minibatch is Binomial(b, 1/n)."""
    rng = derive_stream(StreamKey(seed, ("verify", "binomial")))
    block = rng.integers(0, n, size=(draws, b))
    c = (block == 0).sum(1).astype(np.float64)
    q = 1.0 / n
    mean, var = b * q, b * q * (1 - q)
    mu4 = var * (1 + 3 * (b - 2) * q * (1 - q))
    se_mean = math.sqrt(var / draws)
    se_var = math.sqrt((mu4 - var**2 * (draws - 3) / (draws - 1)) / draws)
    z_mean = (c.mean() - mean) / se_mean
    z_var = (c.var(ddof=1) - var) / se_var
    ok = abs(z_mean) <= 3 and abs(z_var) <= 3
    return SuiteCheck("exact", "binomial_moments", _v(ok),
                      {"z_mean": float(z_mean), "z_var": float(z_var), "draws": draws})


def reduction_suite(seed: int = 0) -> list:
    out = []
    S, p = generate_dataset(GeneratorSpec("Logistic", 6, 40, noise_level=0.5, seed=seed))
    sched = StepSchedule.constant(0.8 / p.L)
    # local SGD with K = 1 is minibatch SGD with b = M on the same stream
    mb = run_minibatch_sgd(p, S, MinibatchConfig(4, 30, sched, seed))
    lo = run_local_sgd(p, S, LocalConfig(4, 1, 30, sched, seed))
    out.append(SuiteCheck("reduction", "local_K1_is_minibatch",
                          _v(np.array_equal(mb.final_w, lo.final_w)), {}))
    # local SGD with M = 1 is sequential single-example SGD
    cfg = LocalConfig(1, 5, 12, sched, seed)
    block = draw_block_for(cfg, S.n)
    w = np.zeros(p.d)
    for r in range(cfg.R):
        for t in range(cfg.K):
            i = block[r, 0, t]
            w = w - sched.eta * loss_grad(p, w, Example(S.X[i], S.y[i]))
    lo = run_local_sgd(p, S, cfg, block)
    diff = float(np.abs(lo.final_w - w).max())
    out.append(SuiteCheck("reduction", "local_M1_is_sequential", _v(diff <= SLACK), {"max_abs_diff": diff}))
    # S' = S makes every coupled pair identical
    spec = GeneratorSpec("LeastSquares", 6, 40, noise_level=0.5, seed=seed)
    est = estimate_on_average_stability(make_instance(spec), spec, MinibatchConfig(4, 20, StepSchedule.constant(0.5), seed),
                                        n_replicates=4, index_subsample=8, same_prime=True)
    out.append(SuiteCheck("reduction", "same_prime_zero_stability",
                          _v(est.l1 == 0.0 and est.l2_sq == 0.0), {"l1": est.l1, "l2_sq": est.l2_sq}))
    return out


def inequality_suite(seed: int = 0, n_replicates: int = 16, index_subsample: int = 16) -> list:
    """Small Monte-Carlo versions of the stability and lemma inequalities."""
    out = []
    kw = dict(n_replicates=n_replicates, index_subsample=index_subsample)

    def add(checks):
        for c in checks:
            out.append(SuiteCheck("inequality", c.name, c.verdict,
                                  {"lhs": c.lhs, "lhs_se": c.lhs_se, "rhs": c.rhs.value}))

    spec = GeneratorSpec("LeastSquares", 20, 128, noise_level=0.5, seed=seed)
    p = make_instance(spec)
    add(stability_bound_checks(p, spec, MinibatchConfig(4, 40, StepSchedule.constant(0.5), seed),
                               ["MB_CONVEX_L1", "MB_CONVEX_L2", "MB_CONVEX_L2_SIMPLE"], **kw)[1])
    add(stability_bound_checks(p, spec, LocalConfig(2, 4, 10, StepSchedule.constant(0.5), seed),
                               ["LOCAL_L1", "LOCAL_L2"], **kw)[1])
    ridge = GeneratorSpec("RidgeLeastSquares", 10, 128, noise_level=0.5, reg=0.5, seed=seed)
    pr = make_instance(ridge)
    add(stability_bound_checks(pr, ridge, MinibatchConfig(4, 60, StepSchedule.poly_strong(4 * pr.L / pr.mu, pr.mu), seed),
                               ["MB_STRONG_L1", "MB_STRONG_L2"], **kw)[1])
    qpl = GeneratorSpec("QuadraticPL", 100, 32, noise_level=0.5, seed=seed)
    pq = make_instance(qpl, draw_examples(qpl, StreamKey(seed, ("data",))))
    add(stability_bound_checks(pq, qpl, MinibatchConfig(4, 15, StepSchedule.constant(0.2), seed),
                               ["MB_NONCONVEX_L1"], **kw)[1])
    add([check_opt_mb_convex(spec, MinibatchConfig(4, 100, StepSchedule.constant(0.9), seed),
                             n_replicates=n_replicates)])
    gen = GeneratorSpec("RidgeLeastSquares", 10, 256, noise_level=0.5, reg=0.05, seed=seed)
    pg = make_instance(gen)
    add([check_gen_pl(gen, MinibatchConfig(2, 200, StepSchedule.poly_strong(4 * pg.L / pg.mu, pg.mu), seed),
                      n_replicates=n_replicates)])
    return out


def run_suite(name: str, seed: int = 0) -> list:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    out = []
    if name in ("exact", "all"):
        out += exact_suite(seed)
    if name in ("reduction", "all"):
        out += reduction_suite(seed)
    if name in ("inequality", "all"):
        out += inequality_suite(seed)
    return out
