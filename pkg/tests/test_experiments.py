import json
import math
import warnings

import numpy as np
import pytest

from sgdlab.bounds import BoundReport, TheoremId, eval_bound
from sgdlab.errors import ConfigurationError, ContractViolation, UnsupportedOperation
from sgdlab.experiments import (
    SweepResult,
    Verdict,
    batch_speedup_sweep,
    check_gen_pl,
    check_opt_mb_convex,
    corollary1_config,
    fit_scaling_exponent,
    local_convex_config,
    local_strong_config,
    machine_speedup_sweep,
    pl_rate_sweep,
    recipe_config,
    replicated_risk,
    risk_decomposition,
    sample_size_sweep,
    strong_config,
    verify_inequality,
)
from sgdlab.optimizers import LocalConfig, MinibatchConfig, StepSchedule, run_local_sgd, run_trainer
from sgdlab.problems import (
    GeneratorSpec,
    empirical_risk,
    generate_dataset,
    make_instance,
    optimal_risk,
)

NOISY = GeneratorSpec("LeastSquares", 16, 128, noise_level=1.0, decay=1.5)


def _rhs(value, form="exact_inequality"):
    return BoundReport(TheoremId.MB_CONVEX_L1, {}, value, form)


# --------------------------------------------------------------------------
# fits and verdicts


def test_fit_exact_power_laws():
    xs = [1, 2, 4, 8, 16]
    slope, ci = fit_scaling_exponent([(x, x) for x in xs])
    assert slope == pytest.approx(1.0, abs=1e-12) and ci == pytest.approx(0.0, abs=1e-10)
    slope, _ = fit_scaling_exponent([(x, 3 / math.sqrt(x)) for x in xs])
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_fit_noisy_inverse_law():
    rng = np.random.default_rng(0)
    xs = np.geomspace(1, 10, 8)
    slope, ci = fit_scaling_exponent([(x, (1 + 0.05 * rng.normal()) / x) for x in xs])
    assert abs(slope + 1.0) <= 0.15 and ci > 0


def test_fit_contract():
    with pytest.raises(ContractViolation):
        fit_scaling_exponent([(1, 1), (2, 2)])
    with pytest.raises(ContractViolation):
        fit_scaling_exponent([(1, 1), (2, 0), (3, 3)])


def test_verdict_examples():
    assert verify_inequality((0.5, 0.01), _rhs(0.6)) == Verdict.HOLDS
    assert verify_inequality((0.7, 0.01), _rhs(0.6)) == Verdict.VIOLATED
    assert verify_inequality((0.6, 0.05), _rhs(0.58)) == Verdict.INCONCLUSIVE
    assert verify_inequality((0.55, 0.0), _rhs(0.58)) == Verdict.HOLDS
    with pytest.raises(UnsupportedOperation):
        verify_inequality((0.1, 0.0), eval_bound("OPT_MB_PL", {"mu": 1, "R": 2, "b": 2}))


# --------------------------------------------------------------------------
# risk decomposition


def test_teacher_on_noiseless_data_has_zero_gaps():
    spec = GeneratorSpec("LeastSquares", 8, 50)
    S, p = generate_dataset(spec)
    rep = risk_decomposition(p, S, p.teacher_w, spec)
    for v in (rep.train_risk, rep.test_risk, rep.gen_gap, rep.opt_gap, rep.excess_risk):
        assert v == pytest.approx(0.0, abs=1e-28)


@pytest.mark.parametrize("spec", [
    GeneratorSpec("LeastSquares", 8, 50, noise_level=0.4),
    GeneratorSpec("RidgeLeastSquares", 8, 50, noise_level=0.4, reg=0.1, decay=1.0),
    GeneratorSpec("Logistic", 4, 50, noise_level=0.5),
], ids=lambda s: s.kind)
def test_decomposition_reconstructs_excess(spec):
    S, p = generate_dataset(spec)
    w = run_trainer(p, S, MinibatchConfig(4, 30, StepSchedule.constant(0.5 / p.L))).final_w
    rep = risk_decomposition(p, S, w, spec, N_test=20_000)
    assert rep.train_risk >= 0
    recon = rep.gen_gap + rep.opt_gap + rep.sample_term
    assert abs(recon - rep.excess_risk) <= 3 * math.hypot(rep.test_se, optimal_risk(p)[1]) + 1e-12


def test_ridge_opt_gap_against_empirical_minimizer_is_nonnegative():
    spec = GeneratorSpec("RidgeLeastSquares", 6, 60, noise_level=0.4, reg=0.5)
    S, p = generate_dataset(spec)
    w = run_trainer(p, S, MinibatchConfig(8, 3000, StepSchedule.poly_strong(4 * p.L / p.mu, p.mu))).final_w
    rep = risk_decomposition(p, S, w, spec, reference="empirical_minimizer")
    assert rep.opt_gap >= -1e-10
    with pytest.raises(ConfigurationError):
        risk_decomposition(p, S, w, spec, reference="oracle")


def test_replicated_risk_reconstructs_excess():
    spec = NOISY
    cfg = MinibatchConfig(2, 64, StepSchedule.constant(0.2))
    rep = replicated_risk(spec, cfg, 8, "uniform")
    assert rep.n_replicates == 8 and rep.excess_se > 0
    assert rep.gen_gap + rep.opt_gap + rep.sample_term == pytest.approx(rep.excess_risk, abs=1e-12)


# --------------------------------------------------------------------------
# recipes


def test_corollary_recipes():
    a = corollary1_config(256, 2, 0.5, 1.0, "high_noise", c=4)
    b = corollary1_config(256, 4, 0.5, 1.0, "high_noise", c=4)
    assert (a.R, b.R) == (512, 256)
    assert a.schedule.eta == pytest.approx(2 / math.sqrt(128))
    with pytest.raises(ConfigurationError):
        corollary1_config(256, 8, 0.5, 1.0, "high_noise")
    with pytest.raises(ConfigurationError):
        corollary1_config(256, 2, 1e-4, 1.0, "high_noise")
    low = corollary1_config(256, 2, 1e-4, 1.0, "low_noise", c=1)
    assert low.R == 256 and low.schedule.eta == 0.5
    with pytest.raises(ConfigurationError):
        corollary1_config(256, 2, 0.5, 1.0, "low_noise")


def test_other_recipes():
    s = strong_config(256, 2, 1.0, 1.0)
    assert s.R == 128 and s.schedule.a == 4.0
    assert strong_config(64, 2, 0.05, 1.0).R == math.ceil(math.log(64) / 0.05)
    lc1, lc2 = local_convex_config(256, 2, 4, 4.0, c=4), local_convex_config(256, 4, 4, 4.0, c=4)
    assert lc1.K * lc1.R == 2 * lc2.K * lc2.R
    assert lc1.schedule.eta * lc1.K * lc1.R == pytest.approx(16.0)
    with pytest.raises(ConfigurationError):
        local_convex_config(16, 5, 4, 1.0)
    ls = local_strong_config(256, 2, 4, 1.0, 2.0)
    ls.validate(2.0)
    with pytest.raises(ConfigurationError):
        local_strong_config(256, 9, 4, 1.0, 2.0)
    with pytest.raises(ConfigurationError):
        recipe_config("magic", NOISY)


# --------------------------------------------------------------------------
# sweeps


def test_batch_sweep_halves_rounds_and_skips_violations():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sweep = batch_speedup_sweep(NOISY, [2, 4, 8], n_replicates=4)
    assert [v for v, _ in sweep.points] == [2, 4]
    assert sweep.skipped and sweep.skipped[0]["value"] == 8 and caught
    assert sweep.points[0][1].steps == 2 * sweep.points[1][1].steps


def test_machine_sweep_and_m1_baseline():
    spec = NOISY.with_(x_cap=2.0)
    sweep = machine_speedup_sweep(spec, [1, 2, 4], K=4, n_replicates=4)
    steps = [pt.steps for _, pt in sweep.points]
    assert steps[0] == 2 * steps[1] == 4 * steps[2]
    assert sweep.extra["per_machine_steps_exponent"] == pytest.approx(-1.0, abs=1e-12)
    # the M = 1 point is plain sequential SGD on the same data and stream
    cfg, _ = recipe_config("local_convex", spec, M=1, K=4)
    assert isinstance(cfg, LocalConfig) and cfg.M == 1


def test_sweep_exports_are_deterministic():
    a = sample_size_sweep(NOISY, [32, 64, 128], "high_noise", n_replicates=4)
    b = sample_size_sweep(NOISY, [32, 64, 128], "high_noise", n_replicates=4)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    assert a.to_csv().splitlines()[0] == "axis,value,excess_risk,se,gen_gap,opt_gap,steps"
    assert a.fitted_exponent is not None and json.loads(a.to_json())["axis"] == "sample_n"


def test_sweep_needs_three_points_to_fit():
    sweep = SweepResult("sample_n", [])
    assert sweep.fit().fitted_exponent is None


# --------------------------------------------------------------------------
# lemma checks


def test_opt_lemma_check_holds_and_needs_constant_step():
    spec = GeneratorSpec("LeastSquares", 10, 64, noise_level=0.5)
    res = check_opt_mb_convex(spec, MinibatchConfig(4, 50, StepSchedule.constant(0.9)), n_replicates=8)
    assert res.verdict != Verdict.VIOLATED
    with pytest.raises(ConfigurationError):
        check_opt_mb_convex(spec, MinibatchConfig(4, 50, StepSchedule.poly_strong(8, 0.5)))


def test_gen_pl_check_reports_hypothesis():
    spec = GeneratorSpec("RidgeLeastSquares", 6, 128, noise_level=0.5, reg=0.05)
    p = make_instance(spec)
    res = check_gen_pl(spec, MinibatchConfig(2, 100, StepSchedule.poly_strong(4 * p.L / p.mu, p.mu)), n_replicates=8)
    assert res.rhs.hypotheses["L_le_n_mu_over_4"]
    assert res.verdict != Verdict.VIOLATED


def test_pl_sweep_decreases():
    spec = GeneratorSpec("QuadraticPL", 64, 8, noise_level=0.5)
    sweep = pl_rate_sweep(spec, [20, 40, 80], n_replicates=4)
    gaps = [pt.opt_gap for _, pt in sweep.points]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert all(g <= e for g, e in zip(gaps, sweep.extra["explicit_bound"]))
