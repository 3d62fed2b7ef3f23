import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.errors import ConfigurationError, ContractViolation
from sgdlab.optimizers import (
    LocalConfig,
    MinibatchConfig,
    StepSchedule,
    Trajectory,
    average_weights,
    compute_averages,
    draw_block_for,
    eta_table,
    minibatch_step,
    minibatch_step_counts,
    run_local_sgd,
    run_minibatch_sgd,
    schedule_eta,
)
from sgdlab.problems import (
    Dataset,
    Example,
    GeneratorSpec,
    ProblemInstance,
    empirical_risk,
    generate_dataset,
    loss_grad,
    per_example_grad,
)
from sgdlab.sampling import DrawRecord, index_counts

KINDS = [("LeastSquares", 0.0), ("Logistic", 0.0), ("RidgeLeastSquares", 0.2)]


def _data(kind="Logistic", reg=0.0, d=5, n=30, seed=0):
    return generate_dataset(GeneratorSpec(kind, d, n, noise_level=0.5, reg=reg, seed=seed))


def _draw(idx, n):
    idx = np.asarray(idx)
    return DrawRecord(0, idx, index_counts(idx, n))


# --------------------------------------------------------------------------
# schedules


def test_schedule_examples():
    assert schedule_eta(StepSchedule.poly_strong(8, 0.5), 1, 1, 2) == pytest.approx(0.4)
    assert schedule_eta(StepSchedule.local_poly_strong(4, 1, 3), 2, 1, 4) == pytest.approx(0.5)
    c = StepSchedule.constant(0.3)
    assert all(schedule_eta(c, r, 1, r) == 0.3 for r in range(1, 50))
    assert eta_table(StepSchedule.local_poly_strong(4, 1, 3), 2, 3)[1, 0] == pytest.approx(0.5)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        StepSchedule.constant(2.5).validate(1.0)
    with pytest.raises(ConfigurationError):
        StepSchedule.poly_strong(3.0, 1.0).validate(1.0)
    with pytest.raises(ConfigurationError):
        StepSchedule.local_poly_strong(1.0, 1.0, 2).validate(1.0)
    StepSchedule.constant(2.0).validate(1.0)
    StepSchedule.poly_strong(4.0, 1.0).validate(1.0)
    with pytest.raises(ContractViolation):
        schedule_eta(StepSchedule.constant(0.1), 0, 1, 1)


def test_run_rejects_step_above_two_over_L():
    S, p = _data()
    with pytest.raises(ConfigurationError):
        run_minibatch_sgd(p, S, MinibatchConfig(2, 3, StepSchedule.constant(2.1 / p.L)))
    with pytest.raises(ConfigurationError):
        run_local_sgd(p, S, LocalConfig(2, 2, 3, StepSchedule.constant(2.1 / p.L)))
    with pytest.raises(ConfigurationError):
        run_minibatch_sgd(p, S, MinibatchConfig(1, 3, StepSchedule.constant(0.1)))


# --------------------------------------------------------------------------
# single steps


def test_step_at_stationary_point_is_identity():
    S, p = generate_dataset(GeneratorSpec("LeastSquares", 4, 10))
    w = p.teacher_w
    out = minibatch_step(p, S, w, _draw([1, 5, 5], S.n), 0.7)
    assert np.allclose(out, w, atol=1e-15)


def test_closed_form_quadratic_step():
    p = ProblemInstance("LeastSquares", 1, 1.0, 0.0)
    S = Dataset(np.ones((3, 1)), np.zeros(3))
    assert minibatch_step(p, S, np.array([1.0]), _draw([0, 2], 3), 0.1) == pytest.approx([0.9])


def test_repeated_index_equals_single_step():
    S, p = _data()
    w = np.linspace(-1, 1, p.d)
    two = minibatch_step(p, S, w, _draw([4, 4], S.n), 0.5)
    single = w - 0.5 * loss_grad(p, w, S[4])
    assert np.allclose(two, single, rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), b=st.integers(1, 10), kind=st.sampled_from(KINDS))
def test_index_and_count_forms_agree(seed, b, kind):
    S, p = _data(*kind)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, S.n, size=b)
    w = rng.normal(size=p.d)
    a = minibatch_step(p, S, w, _draw(idx, S.n), 0.4)
    c = minibatch_step_counts(p, S, w, index_counts(idx, S.n), 0.4)
    assert np.abs(a - c).max() <= 1e-12


# --------------------------------------------------------------------------
# operator properties


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.01, 2.0), kind=st.sampled_from(KINDS))
def test_gradient_step_is_nonexpansive(seed, frac, kind):
    S, p = _data(*kind)
    rng = np.random.default_rng(seed)
    w, wp = rng.normal(size=(2, p.d)) * 2
    z = S[int(rng.integers(S.n))]
    eta = frac / p.L
    lhs = np.linalg.norm(w - eta * loss_grad(p, w, z) - wp + eta * loss_grad(p, wp, z))
    assert lhs <= np.linalg.norm(w - wp) + 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.01, 1.0))
def test_strongly_convex_contraction(seed, frac):
    S, p = _data("RidgeLeastSquares", 0.3)
    rng = np.random.default_rng(seed)
    w, wp = rng.normal(size=(2, p.d)) * 2
    z = S[int(rng.integers(S.n))]
    eta = frac / p.L
    diff = np.linalg.norm(w - eta * loss_grad(p, w, z) - wp + eta * loss_grad(p, wp, z))
    base = np.linalg.norm(w - wp)
    assert diff <= (1 - eta * p.mu / 2) * base + 1e-10
    assert diff**2 <= (1 - eta * p.mu) * base**2 + 1e-10


# --------------------------------------------------------------------------
# trainers


def test_one_round_equals_one_step_from_zero():
    S, p = _data()
    cfg = MinibatchConfig(3, 1, StepSchedule.constant(0.5), seed=4)
    block = draw_block_for(cfg, S.n)
    traj = run_minibatch_sgd(p, S, cfg, block)
    step = minibatch_step(p, S, np.zeros(p.d), _draw(block[0], S.n), 0.5)
    assert np.array_equal(traj.final_w, step)


def test_minibatch_matches_hand_loop():
    S, p = _data("RidgeLeastSquares", 0.2)
    cfg = MinibatchConfig(4, 25, StepSchedule.poly_strong(4 * p.L / p.mu, p.mu), seed=2)
    block = draw_block_for(cfg, S.n)
    w = np.zeros(p.d)
    for r in range(cfg.R):
        eta = schedule_eta(cfg.schedule, r + 1, 1, r + 1)
        w = minibatch_step(p, S, w, _draw(block[r], S.n), eta)
    assert np.array_equal(run_minibatch_sgd(p, S, cfg, block).final_w, w)


def test_trainer_is_deterministic():
    S, p = _data()
    cfg = MinibatchConfig(4, 30, StepSchedule.constant(1.0), seed=9)
    a, b = run_minibatch_sgd(p, S, cfg), run_minibatch_sgd(p, S, cfg)
    assert np.array_equal(a.final_w, b.final_w)
    assert a.to_jsonl() == b.to_jsonl()


def test_uniform_average_does_not_increase_risk_from_zero():
    S, p = _data("LeastSquares")
    for R in (1, 2, 5, 40):
        traj = run_minibatch_sgd(p, S, MinibatchConfig(2, R, StepSchedule.constant(1 / (2 * p.L)), seed=R))
        w_bar = compute_averages(traj, "uniform")
        assert empirical_risk(p, S, w_bar) <= empirical_risk(p, S, np.zeros(p.d)) + 1e-10


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k[0])
def test_local_k1_bitwise_equals_minibatch(kind):
    S, p = _data(*kind)
    sched = StepSchedule.constant(0.9 / p.L)
    for M in (2, 3, 7):
        mb = run_minibatch_sgd(p, S, MinibatchConfig(M, 20, sched, seed=M))
        lo = run_local_sgd(p, S, LocalConfig(M, 1, 20, sched, seed=M))
        assert np.array_equal(mb.final_w, lo.final_w)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k[0])
def test_local_m1_bitwise_equals_sequential_sgd(kind):
    S, p = _data(*kind)
    cfg = LocalConfig(1, 4, 10, StepSchedule.constant(0.8 / p.L), seed=3)
    block = draw_block_for(cfg, S.n)
    w = np.zeros(p.d)
    for i in block.ravel():
        w = w - 0.8 / p.L * loss_grad(p, w, S[i])
    assert np.array_equal(run_local_sgd(p, S, cfg, block).final_w, w)


def test_local_one_round_is_one_shot_averaging():
    S, p = _data()
    cfg = LocalConfig(3, 5, 1, StepSchedule.constant(0.5), seed=1)
    block = draw_block_for(cfg, S.n)
    chains = []
    for m in range(3):
        w = np.zeros(p.d)
        for i in block[0, m]:
            w = w - 0.5 * loss_grad(p, w, S[i])
        chains.append(w)
    assert np.allclose(run_local_sgd(p, S, cfg, block).final_w, np.mean(chains, axis=0), rtol=0, atol=1e-15)


def test_local_sgd_matches_hand_loop_with_local_poly_schedule():
    S, p = _data("RidgeLeastSquares", 0.5)
    a = 2 * p.L / p.mu
    cfg = LocalConfig(2, 3, 6, StepSchedule.local_poly_strong(a, p.mu, 3), seed=5)
    block = draw_block_for(cfg, S.n)
    w = np.zeros(p.d)
    all_iterates, weights = [], []
    for r in range(cfg.R):
        ends = []
        for m in range(cfg.M):
            v = w.copy()
            for t in range(cfg.K):
                all_iterates.append(v.copy())
                weights.append(a + r * cfg.K + t + 1)
                v = v - schedule_eta(cfg.schedule, r + 1, t + 1, r * cfg.K + t + 1) * loss_grad(p, v, S[block[r, m, t]])
            ends.append(v)
        w = np.mean(ends, axis=0)
    traj = run_local_sgd(p, S, cfg, block)
    assert np.allclose(traj.final_w, w, rtol=0, atol=1e-14)
    wts = np.array(weights)
    oracle = (wts[:, None] * np.array(all_iterates)).sum(0) / wts.sum()
    assert np.allclose(compute_averages(traj, "local_weighted"), oracle, rtol=0, atol=1e-14)
    assert np.allclose(compute_averages(traj, "local_all"), np.mean(all_iterates, axis=0), rtol=0, atol=1e-14)


def test_interpolating_descent_on_distance():
    # F_S itself can rise on a stochastic step; the distance to the interpolant cannot
    for seed in range(5):
        S, p = generate_dataset(GeneratorSpec("LeastSquares", 8, 30, seed=seed))
        traj = run_minibatch_sgd(p, S, MinibatchConfig(3, 60, StepSchedule.constant(1 / p.L), seed))
        dist = [np.linalg.norm(w - p.teacher_w) for _, w in traj.logged_iterates]
        assert np.all(np.diff(dist) <= 1e-12)


# --------------------------------------------------------------------------
# averages


def test_averages_against_oracle():
    S, p = _data()
    traj = run_minibatch_sgd(p, S, MinibatchConfig(2, 9, StepSchedule.constant(0.5), seed=1))
    ws = np.array([w for _, w in traj.logged_iterates[:9]])
    assert np.allclose(compute_averages(traj, "uniform"), ws.mean(0), rtol=0, atol=1e-12)
    assert np.allclose(compute_averages(traj, "tail"), ws[4:].mean(0), rtol=0, atol=1e-12)


def test_average_of_identical_iterates():
    w = np.array([1.0, -2.0])
    traj = Trajectory(final_w=w, logged_iterates=[(t, w.copy()) for t in range(1, 6)], R=5)
    assert np.array_equal(compute_averages(traj, "uniform"), w)
    assert np.array_equal(compute_averages(traj, "tail"), w)


def test_missing_iterates_is_contract_violation():
    S, p = _data()
    traj = run_minibatch_sgd(p, S, MinibatchConfig(2, 9, StepSchedule.constant(0.5), log_every=3))
    with pytest.raises(ContractViolation):
        compute_averages(traj, "uniform")
    traj.averages.pop("local_all_average")
    with pytest.raises(ContractViolation):
        compute_averages(traj, "local_all")


@settings(max_examples=40, deadline=None)
@given(R=st.integers(1, 30), M=st.integers(1, 5), K=st.integers(1, 5), a=st.floats(0, 100))
def test_average_weights_sum_to_one(R, M, K, a):
    for scheme in ("uniform", "tail", "local_all", "local_weighted"):
        assert average_weights(scheme, R, M, K, a).sum() == pytest.approx(1.0, abs=1e-12)


def test_log_every_thins_the_log():
    S, p = _data()
    traj = run_minibatch_sgd(p, S, MinibatchConfig(2, 10, StepSchedule.constant(0.5), log_every=4))
    assert [s for s, _ in traj.risk_log] == [1, 5, 9, 11]
    lines = traj.to_jsonl().splitlines()
    assert len(lines) == 5 and '"summary": true' in lines[-1]
