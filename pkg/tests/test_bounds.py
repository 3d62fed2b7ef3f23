import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.bounds import (
    EXACT,
    SCALING,
    TheoremId,
    best_gamma,
    eval_bound,
    gen_gap_bound_from_l2,
    strong_weights,
)
from sgdlab.errors import ConfigurationError, ContractViolation, MissingInputError


def _mb(t=5, eta=0.1, F=0.5, **extra):
    base = {"eta": np.full(t, eta), "F": np.full(t, F), "L": 1.0, "n": 100, "b": 4}
    base.update(extra)
    return base


def test_convex_l1_hand_value():
    rep = eval_bound("MB_CONVEX_L1", _mb(t=3))
    assert rep.value == pytest.approx(3 * (2 * 0.1 * math.sqrt(2 * 1 * 0.5)) / 100, rel=1e-14)
    assert rep.value == pytest.approx(0.006, rel=1e-14)
    assert rep.form == EXACT and rep.hypotheses["eta_le_2_over_L"]


def test_strong_l1_product_expansion():
    rep = eval_bound("MB_STRONG_L1", {"eta": [0.2, 0.2], "F": [0.5, 0.5], "L": 1.0, "n": 10, "mu": 1.0})
    c = 2 * math.sqrt(2) / 10
    assert rep.value == pytest.approx(c * (0.2 * math.sqrt(0.5) * 0.9 + 0.2 * math.sqrt(0.5)), rel=1e-14)


def test_strong_l2_hand_value():
    rep = eval_bound("MB_STRONG_L2", {"eta": [0.2, 0.1], "F": [1.0, 0.5], "L": 2.0, "n": 10, "mu": 1.0, "b": 2})
    w = [0.95, 1.0]
    first = sum(16 * 2 * e**2 / (10 * 2) * f * x for e, f, x in zip([0.2, 0.1], [1.0, 0.5], w))
    second = sum(32 * 2 * e / (100 * 1.0) * f * x for e, f, x in zip([0.2, 0.1], [1.0, 0.5], w))
    assert rep.value == pytest.approx(first + second, rel=1e-14)


def test_nonconvex_growth_factors():
    rep = eval_bound("MB_NONCONVEX_L1", {"eta": [0.1, 0.2], "sqrtF": [1.0, 0.5], "L": 2.0, "n": 4})
    c = 2 * math.sqrt(4.0) / 4
    assert rep.value == pytest.approx(c * (0.1 * 1.0 * 1.4 + 0.2 * 0.5), rel=1e-14)


def test_local_bounds_hand_values():
    eta = np.full((2, 3), 0.1)
    F = np.full((2, 3, 2), 0.5)
    l1 = eval_bound("LOCAL_L1", {"eta": eta, "sqrtF": np.sqrt(F), "L": 1.0, "n": 50, "M": 2})
    assert l1.value == pytest.approx(2 * math.sqrt(2) / 100 * 12 * 0.1 * math.sqrt(0.5), rel=1e-14)
    l2 = eval_bound("LOCAL_L2", {"eta": eta, "F": F, "L": 1.0, "n": 50, "M": 2, "frak_c_sq_sum": 3.0})
    assert l2.value == pytest.approx(16 / (50 * 4) * 12 * 0.01 * 0.5 + 2 / (50**3 * 4) * 3.0, rel=1e-14)


def test_zero_series_gives_zero():
    for tid in ("MB_CONVEX_L1", "MB_CONVEX_L2_SIMPLE", "MB_STRONG_L1", "MB_STRONG_L2"):
        assert eval_bound(tid, _mb(F=0.0, mu=0.5)).value == 0.0
    assert eval_bound("MB_CONVEX_L2", _mb(F=0.0, path_grad_sq_sum=0.0)).value == 0.0
    assert eval_bound("MB_CONVEX_L2_STRONGSB", _mb(F=0.0, path_loss_sq_sum=0.0)).value == 0.0
    assert eval_bound("MB_NONCONVEX_L1", {"eta": [0.1] * 3, "sqrtF": [0.0] * 3, "L": 1, "n": 5}).value == 0.0


def test_input_errors():
    with pytest.raises(MissingInputError) as err:
        eval_bound("MB_CONVEX_L2", _mb())
    assert "path_grad_sq_sum" in str(err.value)
    with pytest.raises(ContractViolation):
        eval_bound("MB_CONVEX_L1", _mb(F=-0.1))
    with pytest.raises(ContractViolation):
        eval_bound("MB_CONVEX_L1", {"eta": [0.1, 0.1], "F": [0.5], "L": 1, "n": 4})
    with pytest.raises(ValueError):
        eval_bound("NOT_A_THEOREM", {})


def test_scaling_only_forms():
    for tid, inputs in [
        ("MB_STRONG_L1_FLAT", {"n": 100, "mu": 0.5}),
        ("OPT_MB_PL", {"mu": 0.5, "R": 10, "b": 2}),
        ("OPT_LOCAL_CONVEX", {"eta": 0.1, "K": 2, "R": 10, "M": 4}),
        ("OPT_LOCAL_STRONG", {"mu": 0.5, "K": 2, "R": 10, "M": 4}),
    ]:
        rep = eval_bound(tid, inputs)
        assert rep.form == SCALING and rep.exponents


def test_pl_explicit_term():
    rep = eval_bound("OPT_MB_PL", {"mu": 0.5, "R": 10, "b": 2, "a": 8.0, "L": 1.0, "sigma2": 0.3, "gap_1": 2.0})
    expected = (8 * 7 * 2.0 + 4 * 1.0 * 10 * 0.3 / (2 * 0.25)) / (18 * 17)
    assert rep.terms["explicit"] == pytest.approx(expected, rel=1e-14)


def test_opt_and_gen_lemmas():
    rep = eval_bound("OPT_MB_CONVEX", {"eta": 0.5, "L": 1.0, "b": 2, "R": 4, "F": [1.0, 0.5, 0.4, 0.3],
                                       "w_norm_sq": 2.0, "F_S_w1": 1.0})
    assert rep.value == pytest.approx(2 * 0.5 / 8 * 2.2 + 2.0 / 4 + 1.0 / 4, rel=1e-14)
    rep = eval_bound("GEN_PL", {"L": 1.0, "n": 100, "mu": 0.1, "F_S_out": 0.2, "opt_gap": 0.01})
    assert rep.value == pytest.approx(16 * 0.2 / 10 + 0.01 / 0.2, rel=1e-14)
    assert rep.hypotheses["L_le_n_mu_over_4"]
    assert eval_bound("GEN_FROM_L1", {"G": 2.0, "eps": 0.1}).value == pytest.approx(0.2)


def test_gen_gap_from_l2():
    assert gen_gap_bound_from_l2(1.0, 1.0, 0.0, 0.0) == 0.0
    assert gen_gap_bound_from_l2(1.0, 1.0, 0.1, 0.04) == pytest.approx(0.14)
    with pytest.raises(ConfigurationError):
        gen_gap_bound_from_l2(1.0, 0.0, 0.1, 0.04)
    grid = np.geomspace(1e-3, 1e3, 200)
    assert min(gen_gap_bound_from_l2(1.0, g, 0.1, 0.04) for g in grid) <= gen_gap_bound_from_l2(1.0, 1.0, 0.1, 0.04)


def test_best_gamma_cases():
    assert best_gamma(2.0, 0.3, 0.0) == 2.0
    assert best_gamma(2.0, 0.0, 0.1) == 1e-6


@settings(max_examples=50, deadline=None)
@given(L=st.floats(0.1, 10), F=st.floats(1e-4, 10), l2=st.floats(1e-6, 1))
def test_best_gamma_beats_grid(L, F, l2):
    g = best_gamma(L, F, l2)
    best = gen_gap_bound_from_l2(L, g, F, l2)
    grid = np.geomspace(1e-6, 1e6, 1000)
    assert min(gen_gap_bound_from_l2(L, x, F, l2) for x in grid) >= best * (1 - 1e-3)


def test_simple_l2_strictly_decreasing_in_b():
    vals = [eval_bound("MB_CONVEX_L2_SIMPLE", _mb(b=b)).value for b in (1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_local_l2_first_term_decreasing_in_machines():
    eta = np.full((5, 2), 0.1)
    firsts = [eval_bound("LOCAL_L2", {"eta": eta, "F": np.full((5, 2, M), 0.4), "L": 1, "n": 64, "M": M,
                                      "frak_c_sq_sum": 0.0}).terms["variance"] for M in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(firsts, firsts[1:]))


def _eq10_with_cap(eta, f, L, n, b):
    """Second term of the MB_CONVEX_L2 bound with every gradient norm replaced by sqrt(2 L f)."""
    paths = (eta[:, None] * np.sqrt(2 * L * f)).sum(0)          # per example m
    return eval_bound("MB_CONVEX_L2", {"eta": eta, "F": f.mean(1), "L": L, "n": n, "b": b,
                                       "path_grad_sq_sum": float((paths**2).sum())})


def test_capped_eq10_reproduces_eq11_for_constant_series():
    t, n = 7, 20
    eta = np.full(t, 0.2)
    f = np.full((t, n), 0.35)
    a = _eq10_with_cap(eta, f, 1.5, n, 4).value
    b = eval_bound("MB_CONVEX_L2_SIMPLE", {"eta": eta, "F": f.mean(1), "L": 1.5, "n": n, "b": 4}).value
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_capped_eq10_never_exceeds_eq11(seed):
    rng = np.random.default_rng(seed)
    t, n = int(rng.integers(1, 12)), int(rng.integers(2, 30))
    eta = rng.uniform(0.01, 1, t)
    f = rng.exponential(size=(t, n))
    a = _eq10_with_cap(eta, f, 1.0, n, 2).value
    b = eval_bound("MB_CONVEX_L2_SIMPLE", {"eta": eta, "F": f.mean(1), "L": 1.0, "n": n, "b": 2}).value
    assert a <= b * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(mu=st.floats(0.01, 2), a=st.floats(4, 200), T=st.integers(1, 400))
def test_strong_weight_identity(mu, a, T):
    eta = 2.0 / (mu * (np.arange(1, T + 1) + a))
    lhs = mu / 2 * float(np.sum(eta * strong_weights(eta, mu)))
    assert lhs == pytest.approx(1 - float(np.prod(1 - mu * eta / 2)), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.1, 10), seed=st.integers(0, 1000))
def test_convex_l1_homogeneous_in_eta(c, seed):
    rng = np.random.default_rng(seed)
    eta, F = rng.uniform(0, 0.5, 6), rng.uniform(0, 2, 6)
    base = eval_bound("MB_CONVEX_L1", {"eta": eta, "F": F, "L": 1.0, "n": 10}).value
    scaled = eval_bound("MB_CONVEX_L1", {"eta": c * eta, "F": F, "L": 1.0, "n": 10}).value
    assert scaled == pytest.approx(c * base, rel=1e-12)


def test_report_serializes():
    rep = eval_bound("MB_CONVEX_L1", _mb())
    assert '"theorem_id": "MB_CONVEX_L1"' in rep.to_json()
    assert TheoremId("GEN_PL") is TheoremId.GEN_PL
