"""Right-hand sides of the stability, generalization and optimization bounds.

Series inputs follow the trainers' conventions: ``eta`` and ``F`` have one
entry per step ``k = 1..t`` (the pre-step iterates ``w_1..w_t``); local-SGD
series are shaped (R, K) for step sizes and (R, K, M) for per-machine risks.
``sqrtF`` means the replicate mean of ``sqrt(F_S(w_k))``, not the square root
of the mean risk.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractViolation, MissingInputError

GAMMA_CLIP = (1e-6, 1e6)


class TheoremId(str, Enum):
    MB_CONVEX_L1 = "MB_CONVEX_L1"
    MB_CONVEX_L2 = "MB_CONVEX_L2"
    MB_CONVEX_L2_SIMPLE = "MB_CONVEX_L2_SIMPLE"
    MB_CONVEX_L2_STRONGSB = "MB_CONVEX_L2_STRONGSB"
    MB_STRONG_L1 = "MB_STRONG_L1"
    MB_STRONG_L1_FLAT = "MB_STRONG_L1_FLAT"
    MB_STRONG_L2 = "MB_STRONG_L2"
    MB_NONCONVEX_L1 = "MB_NONCONVEX_L1"
    LOCAL_L1 = "LOCAL_L1"
    LOCAL_L2 = "LOCAL_L2"
    GEN_FROM_L1 = "GEN_FROM_L1"
    GEN_FROM_L2 = "GEN_FROM_L2"
    OPT_MB_CONVEX = "OPT_MB_CONVEX"
    GEN_PL = "GEN_PL"
    OPT_MB_PL = "OPT_MB_PL"
    OPT_LOCAL_CONVEX = "OPT_LOCAL_CONVEX"
    OPT_LOCAL_STRONG = "OPT_LOCAL_STRONG"


EXACT = "exact_inequality"
SCALING = "scaling_only"


@dataclass
class BoundReport:
    theorem_id: TheoremId
    inputs: dict
    value: float
    form: str = EXACT
    exponents: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)
    hypotheses: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        return {
            "theorem_id": self.theorem_id.value,
            "form": self.form,
            "value": self.value,
            "inputs": {k: conv(v) for k, v in self.inputs.items()},
            "exponents": self.exponents,
            "terms": self.terms,
            "hypotheses": self.hypotheses,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class _Inputs:
    def __init__(self, tid, inputs):
        self.tid = tid
        self.raw = dict(inputs)

    def scalar(self, name, positive=False):
        if name not in self.raw or self.raw[name] is None:
            raise MissingInputError(name, self.tid.value)
        v = float(self.raw[name])
        if v < 0 or (positive and v == 0) or not math.isfinite(v):
            raise ContractViolation(f"input {name}={v} must be {'positive' if positive else 'nonnegative'}")
        return v

    def series(self, name):
        if name not in self.raw or self.raw[name] is None:
            raise MissingInputError(name, self.tid.value)
        v = np.asarray(self.raw[name], dtype=np.float64)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractViolation(f"series {name} has negative or non-finite entries")
        return v


def _tail_products(factors: np.ndarray) -> np.ndarray:
    """out[k] = prod_{k' > k} factors[k'], computed right to left."""
    out = np.ones_like(factors)
    acc = 1.0
    for k in range(len(factors) - 1, -1, -1):
        out[k] = acc
        acc *= factors[k]
    return out


def strong_weights(eta, mu) -> np.ndarray:
    """prod_{k' = k+1}^t (1 - mu eta_{k'} / 2) for k = 1..t."""
    return _tail_products(1.0 - mu * np.asarray(eta, dtype=np.float64) / 2.0)


def _check_len(tid, **series):
    lens = {k: len(v) for k, v in series.items()}
    if len(set(lens.values())) > 1:
        raise ContractViolation(f"{tid.value}: series lengths disagree {lens}")


def eval_bound(theorem_id, inputs: dict) -> BoundReport:
    tid = TheoremId(theorem_id)
    q = _Inputs(tid, inputs)
    terms, hyp, exps = {}, {}, {}
    form = EXACT

    if tid in (TheoremId.MB_CONVEX_L1,):
        eta, F, L, n = q.series("eta"), q.series("F"), q.scalar("L", True), q.scalar("n", True)
        _check_len(tid, eta=eta, F=F)
        value = float(np.sum(2.0 * eta * np.sqrt(2.0 * L * F)) / n)
        hyp["eta_le_2_over_L"] = bool(np.all(eta <= 2.0 / L * (1 + 1e-12)))

    elif tid in (TheoremId.MB_CONVEX_L2, TheoremId.MB_CONVEX_L2_SIMPLE, TheoremId.MB_CONVEX_L2_STRONGSB):
        eta, F = q.series("eta"), q.series("F")
        L, n, b = q.scalar("L", True), q.scalar("n", True), q.scalar("b", True)
        _check_len(tid, eta=eta, F=F)
        t = len(eta)
        s = float(np.sum(eta**2 * F))
        first = 16.0 * L / (n * b) * s
        if tid == TheoremId.MB_CONVEX_L2_SIMPLE:
            second = 16.0 * L * t / n**2 * s
        elif tid == TheoremId.MB_CONVEX_L2:
            second = 8.0 / n**3 * q.scalar("path_grad_sq_sum")
        else:
            second = 8.0 / n**3 * q.scalar("path_loss_sq_sum")
        terms = {"variance": first, "expectation": second}
        value = first + second
        hyp["eta_le_2_over_L"] = bool(np.all(eta <= 2.0 / L * (1 + 1e-12)))

    elif tid == TheoremId.MB_STRONG_L1:
        eta, F = q.series("eta"), q.series("F")
        L, n, mu = q.scalar("L", True), q.scalar("n", True), q.scalar("mu", True)
        _check_len(tid, eta=eta, F=F)
        value = float(2.0 * math.sqrt(2.0 * L) / n * np.sum(eta * np.sqrt(F) * strong_weights(eta, mu)))

    elif tid == TheoremId.MB_STRONG_L2:
        eta, F = q.series("eta"), q.series("F")
        L, n, mu, b = q.scalar("L", True), q.scalar("n", True), q.scalar("mu", True), q.scalar("b", True)
        _check_len(tid, eta=eta, F=F)
        wts = strong_weights(eta, mu)
        first = float(np.sum(16.0 * L * eta**2 / (n * b) * F * wts))
        second = float(np.sum(32.0 * L * eta / (n**2 * mu) * F * wts))
        terms = {"variance": first, "expectation": second}
        value = first + second

    elif tid == TheoremId.MB_STRONG_L1_FLAT:
        n, mu = q.scalar("n", True), q.scalar("mu", True)
        form = SCALING
        exps = {"n": -1.0, "mu": -1.0, "t": 0.0}
        value = 1.0 / (n * mu)

    elif tid == TheoremId.MB_NONCONVEX_L1:
        eta, sqrtF = q.series("eta"), q.series("sqrtF")
        L, n = q.scalar("L", True), q.scalar("n", True)
        _check_len(tid, eta=eta, sqrtF=sqrtF)
        growth = _tail_products(1.0 + eta * L)
        value = float(2.0 * math.sqrt(2.0 * L) / n * np.sum(eta * sqrtF * growth))

    elif tid == TheoremId.LOCAL_L1:
        eta, sqrtF = q.series("eta"), q.series("sqrtF")
        L, n, M = q.scalar("L", True), q.scalar("n", True), q.scalar("M", True)
        eta = eta.reshape(sqrtF.shape[:2]) if eta.ndim == 1 else eta
        if eta.shape != sqrtF.shape[:2]:
            raise ContractViolation(f"{tid.value}: eta {eta.shape} vs sqrtF {sqrtF.shape}")
        if sqrtF.shape[2] != M:
            raise ContractViolation(f"{tid.value}: sqrtF has {sqrtF.shape[2]} machines, M={M}")
        value = float(2.0 * math.sqrt(2.0 * L) / (n * M) * np.sum(eta[:, :, None] * sqrtF))

    elif tid == TheoremId.LOCAL_L2:
        eta, F = q.series("eta"), q.series("F")
        L, n, M = q.scalar("L", True), q.scalar("n", True), q.scalar("M", True)
        eta = eta.reshape(F.shape[:2]) if eta.ndim == 1 else eta
        if eta.shape != F.shape[:2] or F.shape[2] != M:
            raise ContractViolation(f"{tid.value}: eta {eta.shape} vs F {F.shape}, M={M}")
        first = float(16.0 * L / (n * M**2) * np.sum(eta[:, :, None] ** 2 * F))
        second = 2.0 / (n**3 * M**2) * q.scalar("frak_c_sq_sum")
        terms = {"variance": first, "expectation": second}
        value = first + second

    elif tid == TheoremId.GEN_FROM_L1:
        value = q.scalar("G") * q.scalar("eps")

    elif tid == TheoremId.GEN_FROM_L2:
        value = gen_gap_bound_from_l2(q.scalar("L", True), q.scalar("gamma", True),
                                      q.scalar("F_S_out"), q.scalar("l2_sq"))

    elif tid == TheoremId.OPT_MB_CONVEX:
        eta, L, b, R = q.scalar("eta", True), q.scalar("L", True), q.scalar("b", True), q.scalar("R", True)
        F = q.series("F")
        if len(F) != int(R):
            raise ContractViolation(f"{tid.value}: F has {len(F)} entries, R={R}")
        first = 2.0 * eta * L / (b * R) * float(np.sum(F))
        second = q.scalar("w_norm_sq") / (2.0 * eta * R)
        third = q.scalar("F_S_w1") / R
        terms = {"variance": first, "distance": second, "init": third}
        value = first + second + third
        hyp["eta_le_1_over_L"] = bool(eta <= 1.0 / L * (1 + 1e-12))

    elif tid == TheoremId.GEN_PL:
        L, n, mu = q.scalar("L", True), q.scalar("n", True), q.scalar("mu", True)
        first = 16.0 * L * q.scalar("F_S_out") / (n * mu)
        second = L * q.scalar("opt_gap") / (2.0 * mu)
        terms = {"risk": first, "optimization": second}
        value = first + second
        hyp["L_le_n_mu_over_4"] = bool(L <= n * mu / 4.0)

    elif tid == TheoremId.OPT_MB_PL:
        mu, R, b = q.scalar("mu", True), q.scalar("R", True), q.scalar("b", True)
        form = SCALING
        exps = {"R": -1.0, "b": -1.0, "mu": -2.0}
        value = 1.0 / (mu**2 * R**2) + 1.0 / (b * mu**2 * R)
        # the explicit recursion behind the O(.) statement, when its inputs are supplied
        if all(k in q.raw for k in ("a", "L", "sigma2", "gap_1")):
            a, L, s2, g1 = q.scalar("a"), q.scalar("L", True), q.scalar("sigma2"), q.scalar("gap_1")
            terms["explicit"] = (a * (a - 1) * g1 + 4.0 * L * R * s2 / (b * mu**2)) / ((R + a) * (R + a - 1))

    elif tid == TheoremId.OPT_LOCAL_CONVEX:
        eta, K, R, M = q.scalar("eta", True), q.scalar("K", True), q.scalar("R", True), q.scalar("M", True)
        form = SCALING
        exps = {"eta*K*R": -1.0, "M": -1.0}
        value = 1.0 / (eta * K * R) + eta / M + (K - 1) * eta**2

    elif tid == TheoremId.OPT_LOCAL_STRONG:
        mu, K, R, M = q.scalar("mu", True), q.scalar("K", True), q.scalar("R", True), q.scalar("M", True)
        form = SCALING
        exps = {"M*K*R": -1.0, "R": -2.0}
        value = 1.0 / (mu * M * K * R) + math.log(R * K) / (mu**2 * K * R**2)

    else:  # pragma: no cover - the enum is exhaustive
        raise ConfigurationError(f"unsupported theorem {tid}")

    if not value >= 0:
        raise ContractViolation(f"{tid.value} evaluated to {value}")
    return BoundReport(tid, dict(inputs), float(value), form, exps, terms, hyp)


def gen_gap_bound_from_l2(L: float, gamma: float, F_S_out: float, l2_sq: float) -> float:
    """(L/gamma) F_S(A(S)) + ((L + gamma)/2) l2_sq."""
    if not gamma > 0:
        raise ConfigurationError("gamma must be positive")
    return L / gamma * F_S_out + (L + gamma) / 2.0 * l2_sq


def best_gamma(L: float, F_S_out: float, l2_sq: float) -> float:
    """Minimiser of :func:`gen_gap_bound_from_l2` over gamma, clipped."""
    if min(L, F_S_out, l2_sq) < 0:
        raise ContractViolation("inputs must be nonnegative")
    if l2_sq == 0:
        return float(L)
    g = math.sqrt(2.0 * L * F_S_out / l2_sq)
    return float(min(max(g, GAMMA_CLIP[0]), GAMMA_CLIP[1]))
