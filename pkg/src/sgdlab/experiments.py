"""Risk decomposition, scaling sweeps, speedup sweeps and inequality verdicts.

Every replicate ``r`` of an experiment draws its training set from the key
``rep/<r>/family/S`` and its index stream from ``rep/<r>/indices`` under the
experiment's master seed, so all points of a sweep reuse the same random
numbers (common random numbers) wherever their shapes agree.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy import stats

from .bounds import EXACT, BoundReport, TheoremId, eval_bound
from .engine import Tracking, run_batch
from .errors import ConfigurationError, ContractViolation, UnsupportedOperation
from .optimizers import (
    LocalConfig,
    MinibatchConfig,
    StepSchedule,
    as_engine_block,
    block_shape,
    eta_table,
    weight_offset,
)
from .problems import (
    QUADRATIC_KINDS,
    Dataset,
    GeneratorSpec,
    ProblemInstance,
    draw_examples,
    empirical_minimizer,
    empirical_risk,
    make_instance,
    optimal_risk,
    per_example_loss,
    population_minimizer,
    population_risk,
    population_risk_estimate,
    smallest_positive_eigenvalue,
    smoothness_constant,
)
from .sampling import StreamKey, derive_stream, draw_index_block
from .stability import StabilityEstimate, estimate_on_average_stability

DEFAULT_N_TEST = 20_000


class Verdict(str, Enum):
    HOLDS = "holds"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


# --------------------------------------------------------------------------
# risk decomposition


@dataclass
class RiskReport:
    train_risk: float
    test_risk: float
    test_se: float
    gen_gap: float
    opt_gap: float
    excess_risk: float
    reference: str
    F_star: float
    ref_train_risk: float = 0.0          # F_S(reference)
    sample_term: float = 0.0             # F_S(w*) - F(w*)
    excess_se: float = 0.0
    gen_gap_se: float = 0.0
    opt_gap_se: float = 0.0
    n_replicates: int = 1
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _test_risk(p: ProblemInstance, test_spec: GeneratorSpec, w, N_test: int, seed: int):
    if p.kind in QUADRATIC_KINDS:
        return population_risk(p, w), 0.0
    return population_risk_estimate(p, test_spec, w, N_test, seed)


def risk_decomposition(p: ProblemInstance, S: Dataset, w_out, test_spec: GeneratorSpec,
                       reference: str = "teacher", N_test: int = DEFAULT_N_TEST, seed: int = 0) -> RiskReport:
    """Split F(w_out) - F(w*) into generalization and optimization parts.

    ``reference="teacher"`` measures the optimization gap against the
    population minimiser w* (the planted teacher for unregularised least
    squares); ``"empirical_minimizer"`` against argmin F_S.
    """
    if reference not in ("teacher", "empirical_minimizer"):
        raise ConfigurationError(f"unknown reference {reference!r}")
    w_star = population_minimizer(p)
    F_star, _ = optimal_risk(p)
    train = empirical_risk(p, S, w_out)
    test, se = _test_risk(p, test_spec, w_out, N_test, seed)
    w_ref = w_star if reference == "teacher" else empirical_minimizer(p, S)
    ref_train = empirical_risk(p, S, w_ref)
    return RiskReport(
        train_risk=train,
        test_risk=test,
        test_se=se,
        gen_gap=test - train,
        opt_gap=train - ref_train,
        excess_risk=test - F_star,
        reference=reference,
        F_star=F_star,
        ref_train_risk=ref_train,
        sample_term=empirical_risk(p, S, w_star) - F_star,
        excess_se=se,
    )


# --------------------------------------------------------------------------
# scaling fits and verdicts


def fit_scaling_exponent(points) -> tuple[float, float]:
    """OLS slope of log y on log x and the half-width of its 95% CI."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ContractViolation("need at least 3 points for a fit")
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ContractViolation("scaling fits need positive values")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    fit = stats.linregress(lx, ly)
    half = float(stats.t.ppf(0.975, len(pts) - 2) * fit.stderr)
    return float(fit.slope), half


def verify_inequality(lhs_mc, rhs: BoundReport, k: float = 3.0) -> Verdict:
    """Compare a Monte-Carlo (mean, se) left-hand side with a bound value."""
    if rhs.form != EXACT:
        raise UnsupportedOperation(f"{rhs.theorem_id.value} is scaling-only; fit an exponent instead")
    mean, se = lhs_mc
    # holds only when the whole k-sigma band sits below the bound
    if mean + k * se <= rhs.value:
        return Verdict.HOLDS
    if mean - k * se > rhs.value:
        return Verdict.VIOLATED
    return Verdict.INCONCLUSIVE


@dataclass
class CheckResult:
    name: str
    lhs: float
    lhs_se: float
    rhs: BoundReport
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "lhs_se": self.lhs_se,
                "rhs": self.rhs.to_dict(), "verdict": self.verdict.value}


def _check(name, lhs, se, rhs) -> CheckResult:
    return CheckResult(name, float(lhs), float(se), rhs, verify_inequality((lhs, se), rhs))


def _paired(lhs_r, rhs_r):
    """Mean of lhs and the standard error of lhs - rhs across replicates."""
    diff = np.asarray(lhs_r) - np.asarray(rhs_r)
    return float(np.mean(lhs_r)), float(diff.std(ddof=1) / math.sqrt(len(diff)))


# --------------------------------------------------------------------------
# replicated training runs


@dataclass
class RunBatch:
    outputs: np.ndarray        # (reps, d) selected output per replicate
    X: np.ndarray
    y: np.ndarray
    engine: list


def _output_of(res, output):
    return {
        "final": res.final,
        "uniform": res.avg_uniform,
        "tail": res.avg_tail,
        "local_all": res.avg_local_all,
        "local_weighted": res.avg_local_weighted,
    }[output][:, 0]


def replicate_runs(spec: GeneratorSpec, cfg, n_replicates: int, output: str = "final", *,
                   track: Optional[Tracking] = None, seed: Optional[int] = None,
                   threads: int = 1, chunk: int = 8, fixed_dataset: bool = False) -> RunBatch:
    """Train on ``n_replicates`` independent datasets (or one fixed dataset)."""
    master = cfg.seed if seed is None else seed
    cfg.validate(smoothness_constant(spec))
    etas = eta_table(cfg.schedule, cfg.R, cfg.K)

    def data(r):
        if fixed_dataset:
            return draw_examples(spec, StreamKey(master, ("data",)))
        return draw_examples(spec, StreamKey(master, ("rep", r, "family", "S")))

    def work(reps):
        sets = [data(r) for r in reps]
        blocks = [as_engine_block(cfg, draw_index_block(
            derive_stream(StreamKey(master, ("rep", r, "indices"))), spec.n, block_shape(cfg))) for r in reps]
        X = np.stack([s.X for s in sets])
        y = np.stack([s.y for s in sets])
        res = run_batch(spec.kind, spec.reg, X, y, np.stack(blocks), etas,
                        weight_offset=weight_offset(cfg), track=track)
        return X, y, res

    chunks = [list(range(s, min(s + chunk, n_replicates))) for s in range(0, n_replicates, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return RunBatch(
        outputs=np.concatenate([_output_of(r, output) for _, _, r in parts]),
        X=np.concatenate([x for x, _, _ in parts]),
        y=np.concatenate([y for _, y, _ in parts]),
        engine=[r for _, _, r in parts],
    )


def replicated_risk(spec: GeneratorSpec, cfg, n_replicates: int = 32, output: str = "final", *,
                    seed: Optional[int] = None, threads: int = 1, N_test: int = DEFAULT_N_TEST) -> RiskReport:
    """Replicate-averaged risk decomposition with standard errors."""
    runs = replicate_runs(spec, cfg, n_replicates, output, seed=seed, threads=threads)
    p = make_instance(spec, Dataset(runs.X[0], runs.y[0]))
    w_star = population_minimizer(p)
    F_star, _ = optimal_risk(p)
    train, test, ref = [], [], []
    for j, w in enumerate(runs.outputs):
        S = Dataset(runs.X[j], runs.y[j])
        train.append(empirical_risk(p, S, w))
        test.append(_test_risk(p, spec, w, N_test, j)[0])
        ref.append(empirical_risk(p, S, w_star))
    train, test, ref = map(np.asarray, (train, test, ref))
    sq = math.sqrt(n_replicates)
    excess = test - F_star
    return RiskReport(
        train_risk=float(train.mean()),
        test_risk=float(test.mean()),
        test_se=float(test.std(ddof=1) / sq),
        gen_gap=float((test - train).mean()),
        opt_gap=float((train - ref).mean()),
        excess_risk=float(excess.mean()),
        reference="teacher",
        F_star=F_star,
        ref_train_risk=float(ref.mean()),
        sample_term=float(ref.mean() - F_star),
        excess_se=float(excess.std(ddof=1) / sq),
        gen_gap_se=float((test - train).std(ddof=1) / sq),
        opt_gap_se=float((train - ref).std(ddof=1) / sq),
        n_replicates=n_replicates,
        steps=cfg.R * cfg.K,
    )


# --------------------------------------------------------------------------
# recipes


def f_star_of(spec: GeneratorSpec) -> float:
    return optimal_risk(make_instance(spec))[0]


def corollary1_config(n: int, b: int, F_star: float, L: float, regime: str, c: float = 4.0,
                      seed: int = 0) -> MinibatchConfig:
    """Step size and round count of the convex minibatch recipe.

    high_noise (F* >= 1/n): eta = b / sqrt(n F*), R = ceil(c n / b), b <= sqrt(n F*) / (2L).
    low_noise (F* < 1/n): eta = 1 / (2L), R = ceil(c n).
    """
    if regime == "high_noise":
        if F_star < 1.0 / n:
            raise ConfigurationError(f"high_noise needs F* >= 1/n; F*={F_star}, n={n}")
        if b > math.sqrt(n * F_star) / (2 * L):
            raise ConfigurationError(f"b={b} exceeds sqrt(n F*)/(2L)={math.sqrt(n * F_star) / (2 * L):.3f}")
        return MinibatchConfig(b, math.ceil(c * n / b), StepSchedule.constant(b / math.sqrt(n * F_star)), seed)
    if regime == "low_noise":
        if F_star >= 1.0 / n:
            raise ConfigurationError(f"low_noise needs F* < 1/n; F*={F_star}, n={n}")
        return MinibatchConfig(b, math.ceil(c * n), StepSchedule.constant(1.0 / (2 * L)), seed)
    raise ConfigurationError(f"unknown regime {regime!r}")


def strong_config(n: int, b: int, mu: float, L: float, seed: int = 0) -> MinibatchConfig:
    """R = max{n/b, mu^-1 log n} with eta_t = 2/(mu(t + a)), a = 4L/mu."""
    R = max(math.ceil(n / b), math.ceil(math.log(n) / mu))
    return MinibatchConfig(b, R, StepSchedule.poly_strong(4 * L / mu, mu), seed)


def local_convex_config(n: int, M: int, K: int, L: float, c: float = 4.0, seed: int = 0) -> LocalConfig:
    """eta K R = sqrt(n) with R = ceil(c n / (K M)); requires M <= sqrt(n)."""
    if M > math.sqrt(n):
        raise ConfigurationError(f"M={M} exceeds sqrt(n)={math.sqrt(n):.2f}")
    R = math.ceil(c * n / (K * M))
    eta = math.sqrt(n) / (K * R)
    if eta > 2.0 / L:
        raise ConfigurationError(f"recipe step {eta} exceeds 2/L; raise c")
    return LocalConfig(M, K, R, StepSchedule.constant(eta), seed)


def local_strong_config(n: int, M: int, K: int, mu: float, L: float, c: float = 1.0,
                        seed: int = 0) -> LocalConfig:
    """R = ceil(c n / (K M)), eta_{r,t} = 4/(mu(a + (r-1)K + t)); requires M <= sqrt(n mu / K)."""
    if M > math.sqrt(n * mu / K):
        raise ConfigurationError(f"M={M} exceeds sqrt(n mu / K)={math.sqrt(n * mu / K):.2f}")
    a = 2 * L / mu
    R = math.ceil(c * n / (K * M))
    return LocalConfig(M, K, R, StepSchedule.local_poly_strong(a, mu, K), seed)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    axis: str
    points: list                       # (axis value, RiskReport | StabilityEstimate)
    fitted_exponent: Optional[float] = None
    ci: Optional[float] = None
    metric: str = "excess_risk"
    skipped: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def values(self) -> list:
        if self.metric == "excess_risk":
            return [pt.excess_risk for _, pt in self.points]
        return [getattr(pt, self.metric) for _, pt in self.points]

    def fit(self) -> "SweepResult":
        if len(self.points) >= 3:
            self.fitted_exponent, self.ci = fit_scaling_exponent(
                [(v, m) for (v, _), m in zip(self.points, self.values())])
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "value", "excess_risk", "se", "gen_gap", "opt_gap", "steps"])
        for v, pt in self.points:
            if isinstance(pt, RiskReport):
                w.writerow([self.axis, v, repr(pt.excess_risk), repr(pt.excess_se),
                            repr(pt.gen_gap), repr(pt.opt_gap), pt.steps])
            else:
                # stability points: the metric column carries l1 and its standard error
                w.writerow([self.axis, v, repr(pt.l1), repr(pt.l1_se), "", "",
                            pt.trainer.get("R", 0) * pt.trainer.get("K", 1)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        pts = []
        for v, pt in self.points:
            d = pt.to_dict()
            if isinstance(pt, StabilityEstimate):
                d = {k: d[k] for k in ("l1", "l1_se", "l2_sq", "l2_sq_se", "n_replicates",
                                        "n_indices_sampled", "trainer", "n")}
            pts.append({"value": v, "point": d})
        return {"axis": self.axis, "metric": self.metric, "fitted_exponent": self.fitted_exponent,
                "ci": self.ci, "skipped": self.skipped, "extra": self.extra, "points": pts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def batch_speedup_sweep(spec: GeneratorSpec, b_list, regime: str = "high_noise", *, c: float = 4.0,
                        n_replicates: int = 32, seed: int = 0, threads: int = 1) -> SweepResult:
    """Excess risk of the convex recipe across batch sizes at fixed n."""
    F_star = f_star_of(spec)
    L = make_instance(spec).L
    pts, skipped = [], []
    for b in b_list:
        try:
            cfg = corollary1_config(spec.n, b, F_star, L, regime, c, seed)
        except ConfigurationError as exc:
            warnings.warn(f"skipping b={b}: {exc}")
            skipped.append({"value": b, "reason": str(exc)})
            continue
        pts.append((b, replicated_risk(spec, cfg, n_replicates, "uniform", seed=seed, threads=threads)))
    out = SweepResult("batch_b", pts, skipped=skipped, extra={"regime": regime, "c": c, "F_star": F_star})
    if len(pts) >= 3:
        out.extra["rounds_exponent"] = fit_scaling_exponent([(b, r.steps) for b, r in pts])[0]
    return out.fit()


def machine_speedup_sweep(spec: GeneratorSpec, M_list, K: int, mode: str = "convex", *, c: float = 4.0,
                          mu: Optional[float] = None, n_replicates: int = 32, seed: int = 0,
                          threads: int = 1) -> SweepResult:
    """Excess risk of the local-SGD recipe across machine counts at fixed n."""
    p = make_instance(spec)
    pts, skipped = [], []
    for M in M_list:
        try:
            if mode == "convex":
                cfg = local_convex_config(spec.n, M, K, p.L, c, seed)
                output = "local_all"
            elif mode == "strong":
                cfg = local_strong_config(spec.n, M, K, mu if mu is not None else p.mu, p.L, c, seed)
                output = "local_weighted"
            else:
                raise ConfigurationError(f"unknown mode {mode!r}")
        except ConfigurationError as exc:
            warnings.warn(f"skipping M={M}: {exc}")
            skipped.append({"value": M, "reason": str(exc)})
            continue
        pts.append((M, replicated_risk(spec, cfg, n_replicates, output, seed=seed, threads=threads)))
    out = SweepResult("machines_M", pts, skipped=skipped, extra={"mode": mode, "K": K, "c": c})
    if len(pts) >= 3:
        out.extra["per_machine_steps_exponent"] = fit_scaling_exponent([(M, r.steps) for M, r in pts])[0]
    return out.fit()


RECIPES = ("high_noise", "low_noise", "strong", "local_convex", "local_strong")


def recipe_config(recipe: str, spec: GeneratorSpec, *, b: int = 2, M: int = 2, K: int = 4,
                  c: float = 4.0, seed: int = 0):
    """(config, output) of a named recipe at the spec's sample size."""
    p = make_instance(spec)
    if recipe in ("high_noise", "low_noise"):
        return corollary1_config(spec.n, b, f_star_of(spec), p.L, recipe, c, seed), "uniform"
    if recipe == "strong":
        return strong_config(spec.n, b, p.mu, p.L, seed), "tail"
    if recipe == "local_convex":
        return local_convex_config(spec.n, M, K, p.L, c, seed), "local_all"
    if recipe == "local_strong":
        return local_strong_config(spec.n, M, K, p.mu, p.L, c, seed), "local_weighted"
    raise ConfigurationError(f"unknown recipe {recipe!r}")


def sample_size_sweep(spec: GeneratorSpec, n_list, recipe: str, *, n_replicates: int = 32, seed: int = 0,
                      threads: int = 1, **recipe_kw) -> SweepResult:
    """Excess risk of a recipe across sample sizes; fits the exponent in n."""
    pts = []
    for n in n_list:
        s = replace(spec, n=n)
        cfg, output = recipe_config(recipe, s, seed=seed, **recipe_kw)
        pts.append((n, replicated_risk(s, cfg, n_replicates, output, seed=seed, threads=threads)))
    return SweepResult("sample_n", pts, extra={"recipe": recipe, **recipe_kw}).fit()


def stability_sweep(spec: GeneratorSpec, cfg, axis: str, values, *, n_replicates: int = 64,
                    index_subsample: int = 32, threads: int = 1) -> SweepResult:
    """l1 stability along rounds_R or sample_n; fits its exponent."""
    pts = []
    for v in values:
        if axis == "rounds_R":
            s, c = spec, replace(cfg, R=int(v))
        elif axis == "sample_n":
            s, c = replace(spec, n=int(v)), cfg
        else:
            raise ConfigurationError(f"unknown stability axis {axis!r}")
        p = make_instance(s) if s.kind != "QuadraticPL" else make_instance(
            s, draw_examples(s, StreamKey(c.seed, ("data",))))
        est = estimate_on_average_stability(p, s, c, n_replicates, index_subsample,
                                            track=Tracking(), threads=threads)
        pts.append((v, est))
    return SweepResult(axis, pts, metric="l1").fit()


# --------------------------------------------------------------------------
# inequality checks


def stability_bound_checks(p: ProblemInstance, spec: GeneratorSpec, cfg, theorems, *,
                           n_replicates: int = 64, index_subsample: int = 32,
                           threads: int = 1) -> tuple[StabilityEstimate, list]:
    """Estimate stability once and compare it with each requested bound."""
    theorems = [TheoremId(t) for t in theorems]
    local = isinstance(cfg, LocalConfig)
    track = Tracking(
        risk=True,
        paths=not local and any(t in (TheoremId.MB_CONVEX_L2, TheoremId.MB_CONVEX_L2_STRONGSB) for t in theorems),
        frak_c=local and TheoremId.LOCAL_L2 in theorems,
        distance=True,
    )
    est = estimate_on_average_stability(p, spec, cfg, n_replicates, index_subsample,
                                        track=track, threads=threads)
    base = {"L": p.L, "n": spec.n}
    checks = []
    for tid in theorems:
        if local:
            inputs = dict(base, eta=est.etas, M=cfg.M)
            if tid == TheoremId.LOCAL_L1:
                inputs["sqrtF"] = est.sqrt_risk_mean
            else:
                inputs.update(F=est.risk_mean, frak_c_sq_sum=est.frak_c_sq_sum)
        else:
            eta = est.etas[:, 0]
            F = est.risk_mean[:, 0, 0]
            inputs = dict(base, eta=eta, F=F, b=cfg.b)
            if tid in (TheoremId.MB_STRONG_L1, TheoremId.MB_STRONG_L2):
                inputs["mu"] = p.mu
            if tid == TheoremId.MB_NONCONVEX_L1:
                inputs = dict(base, eta=eta, sqrtF=est.sqrt_risk_mean[:, 0, 0])
            if tid == TheoremId.MB_CONVEX_L2:
                inputs["path_grad_sq_sum"] = est.path_grad_sq_sum
            if tid == TheoremId.MB_CONVEX_L2_STRONGSB:
                inputs["path_loss_sq_sum"] = est.path_loss_sq_sum
            if tid == TheoremId.MB_CONVEX_L1:
                inputs = dict(base, eta=eta, F=F)
        rep = eval_bound(tid, inputs)
        l2 = tid in (TheoremId.MB_CONVEX_L2, TheoremId.MB_CONVEX_L2_SIMPLE, TheoremId.MB_CONVEX_L2_STRONGSB,
                     TheoremId.MB_STRONG_L2, TheoremId.LOCAL_L2)
        lhs, se = (est.l2_sq, est.l2_sq_se) if l2 else (est.l1, est.l1_se)
        checks.append(_check(tid.value, lhs, se, rep))
        est.bounds.append(rep)
    return est, checks


def check_opt_mb_convex(spec: GeneratorSpec, cfg: MinibatchConfig, *, n_replicates: int = 64,
                        threads: int = 1) -> CheckResult:
    """Optimization lemma for convex minibatch SGD at w = w* (constant eta <= 1/L)."""
    if cfg.schedule.variant != "Constant":
        raise ConfigurationError("the convex optimization lemma needs a constant step")
    runs = replicate_runs(spec, cfg, n_replicates, track=Tracking(risk=True), threads=threads)
    p = make_instance(spec, Dataset(runs.X[0], runs.y[0]))
    w = population_minimizer(p)
    risk = np.concatenate([e.risk[:, :, 0, 0] for e in runs.engine])     # (reps, R)
    eta, L, b, R = cfg.schedule.eta, p.L, cfg.b, cfg.R
    F_w = np.array([empirical_risk(p, Dataset(x, y), w) for x, y in zip(runs.X, runs.y)])
    lhs_r = risk.mean(1) - F_w
    rhs_r = 2 * eta * L / (b * R) * risk.sum(1) + float(w @ w) / (2 * eta * R) + risk[:, 0] / R
    lhs, se = _paired(lhs_r, rhs_r)
    rep = eval_bound(TheoremId.OPT_MB_CONVEX, {
        "eta": eta, "L": L, "b": b, "R": R, "F": risk.mean(0),
        "w_norm_sq": float(w @ w), "F_S_w1": float(risk[:, 0].mean()),
    })
    return _check("OPT_MB_CONVEX", lhs + float(np.mean(rhs_r)) - rep.value, se, rep)


def check_gen_pl(spec: GeneratorSpec, cfg, *, n_replicates: int = 64, output: str = "final",
                 threads: int = 1) -> CheckResult:
    """Generalization lemma under PL: gen gap vs 16 L F_S/(n mu) + L (F_S - F_S(w_S))/(2 mu)."""
    runs = replicate_runs(spec, cfg, n_replicates, output, threads=threads)
    lhs_r, rhs_r, fs, opt = [], [], [], []
    mu = None
    for j, w in enumerate(runs.outputs):
        S = Dataset(runs.X[j], runs.y[j])
        p = make_instance(spec, S)
        mu = p.mu if mu is None else min(mu, p.mu)
        train = empirical_risk(p, S, w)
        gap = train - empirical_risk(p, S, empirical_minimizer(p, S))
        test = _test_risk(p, spec, w, DEFAULT_N_TEST, j)[0]
        lhs_r.append(test - train)
        rhs_r.append(16 * p.L * train / (spec.n * p.mu) + p.L * gap / (2 * p.mu))
        fs.append(train)
        opt.append(max(gap, 0.0))
    lhs, se = _paired(lhs_r, rhs_r)
    rep = eval_bound(TheoremId.GEN_PL, {"L": p.L, "n": spec.n, "mu": mu,
                                        "F_S_out": float(np.mean(fs)), "opt_gap": float(np.mean(opt))})
    if not rep.hypotheses["L_le_n_mu_over_4"]:
        warnings.warn("GEN_PL hypothesis L <= n mu / 4 fails; the verdict is not meaningful")
    return _check("GEN_PL", lhs + float(np.mean(rhs_r)) - rep.value, se, rep)


def empirical_pl_constant(p: ProblemInstance, S: Dataset) -> float:
    """Smallest positive curvature of F_S, the PL constant of a quadratic objective."""
    if p.kind not in QUADRATIC_KINDS:
        raise UnsupportedOperation("the PL constant is computed for quadratic objectives only")
    if p.reg > 0 and S.n < S.d:
        return p.reg
    return smallest_positive_eigenvalue(S) + p.reg


def pl_rate_sweep(spec: GeneratorSpec, R_list, *, b: int = 2, n_replicates: int = 32,
                  seed: int = 0, threads: int = 1) -> SweepResult:
    """F_S(w_{R+1}) - F_S(w_S) on one fixed dataset with eta_t = 2/(mu(t + a)), a = 4L/mu."""
    S = draw_examples(spec, StreamKey(seed, ("data",)))
    p = make_instance(spec, S)
    mu = empirical_pl_constant(p, S)
    F_min = empirical_risk(p, S, empirical_minimizer(p, S))
    gap_1 = empirical_risk(p, S, np.zeros(p.d)) - F_min
    a = 4 * p.L / mu
    pts, explicit = [], []
    for R in R_list:
        cfg = MinibatchConfig(b, int(R), StepSchedule.poly_strong(a, mu), seed)
        runs = replicate_runs(spec, cfg, n_replicates, "final", seed=seed, threads=threads,
                              fixed_dataset=True, track=Tracking(variance=True))
        gaps = np.array([empirical_risk(p, S, w) - F_min for w in runs.outputs])
        sigma2 = max(float(e.sigma2.max()) for e in runs.engine)
        rep = eval_bound(TheoremId.OPT_MB_PL, {"mu": mu, "R": R, "b": b, "a": a, "L": p.L,
                                               "sigma2": sigma2, "gap_1": gap_1})
        explicit.append(rep.terms["explicit"])
        pts.append((int(R), RiskReport(
            train_risk=float(gaps.mean() + F_min), test_risk=float("nan"), test_se=0.0,
            gen_gap=float("nan"), opt_gap=float(gaps.mean()), excess_risk=float("nan"),
            reference="empirical_minimizer", F_star=float("nan"), ref_train_risk=F_min,
            opt_gap_se=float(gaps.std(ddof=1) / math.sqrt(len(gaps))),
            n_replicates=n_replicates, steps=int(R))))
    extra = {"mu": mu, "a": a, "L": p.L, "b": b, "explicit_bound": explicit}
    return SweepResult("rounds_R", pts, metric="opt_gap", extra=extra).fit()
