"""Vectorised SGD core shared by the trainers and the stability estimators.

A batch holds ``B`` replicate datasets and ``P`` rows per replicate. Row ``p``
of replicate ``j`` trains on dataset ``j`` with example ``repl[j, p]`` swapped
for ``Xp[j, repl[j, p]]`` (``-1`` = unmodified). All rows of a replicate consume
the same index block, which is the shared-path coupling.

Every run is expressed as local SGD: ``M`` chains of ``K`` single-example
steps per round, then ``w <- sum_m w_m / M``. Minibatch SGD with batch ``b``
is the case ``M = b, K = 1``, since ``w - (eta/b) sum_j g_j`` equals
``(1/b) sum_j (w - eta g_j)``. The update of a row only uses elementwise
arithmetic and reductions along its own axes, so a row's result does not
depend on which other rows share the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from scipy import special

from .problems import per_example_grad, per_example_loss


@dataclass
class Tracking:
    risk: bool = False          # F_S at every pre-step iterate of the base row
    paths: bool = False         # per-example sums of eta*||grad|| and eta*f (base row)
    frak_c: bool = False        # sum of eta*||grad f(w;z_i) - grad f(w^(i); z'_i)|| per variant row
    variance: bool = False      # max per-example gradient variance and max gradient norm
    distance: bool = False      # ||w_r^(p) - w_r^(0)|| after every round
    grad_norms: bool = False    # mean/max per-example gradient norm at round starts
    iterates: bool = False      # keep every round-start iterate


@dataclass
class EngineResult:
    final: np.ndarray                       # (B, P, d)
    avg_uniform: np.ndarray                 # mean of round-start iterates w_1..w_R
    avg_tail: np.ndarray                    # mean of the last ceil(R/2) round-start iterates
    avg_local_all: np.ndarray               # mean over all w_{m,r,t}
    avg_local_weighted: np.ndarray          # weights (a + (r-1)K + t) / (M S_R)
    weight_sum: float                       # S_R
    risk: Optional[np.ndarray] = None       # (B, R, K, M) F_S(w_{m,r,t}) of row 0
    final_risk: Optional[np.ndarray] = None  # (B, P) F_S of each row's final iterate on its own dataset
    path_grad: Optional[np.ndarray] = None  # (B, n)
    path_loss: Optional[np.ndarray] = None  # (B, n)
    frak_c: Optional[np.ndarray] = None     # (B, P)
    sigma2: Optional[np.ndarray] = None     # (B,)
    gmax: Optional[np.ndarray] = None       # (B,)
    distance: Optional[np.ndarray] = None   # (B, P, R)
    grad_norm_mean: Optional[np.ndarray] = None  # (B, R + 1)
    grad_norm_max: Optional[np.ndarray] = None   # (B, R + 1)
    iterates: Optional[np.ndarray] = None   # (B, P, R + 1, d)
    extra: dict = field(default_factory=dict)


def _patches(Xp, yp, repl, idx):
    """Positions (b, p, m) where a row sees its replacement example, and that example."""
    if Xp is None:
        return None
    mask = idx[:, None, :] == repl[:, :, None]      # (B, P, M); repl = -1 never matches
    if not mask.any():
        return None
    jb, jp, jm = np.nonzero(mask)
    i = repl[jb, jp]
    return jb, jp, jm, Xp[jb, i], yp[jb, i]


def _coef(kind, marg, y):
    if kind == "Logistic":
        return -y * special.expit(-y * marg)
    return marg - y


def sgd_substeps(kind, reg, Wm, Xb, yb, eta, patch=None):
    """One single-example step on every chain: ``w - eta * grad f(w; z)``.

    ``Wm`` is (B, P, M, d) or (B, P, 1, d) when all chains share an iterate;
    ``Xb``/``yb`` are shared by the P rows and ``patch`` overrides single
    positions. Arithmetic per element matches :func:`per_example_grad`.
    """
    marg = (Xb * Wm).sum(-1)
    yr = np.broadcast_to(yb, marg.shape)
    if patch is not None:
        jb, jp, jm, xv, yv = patch
        wv = Wm[jb, jp, jm if Wm.shape[2] > 1 else 0]
        marg[jb, jp, jm] = (xv * wv).sum(-1)
        yr = yr.copy()
        yr[jb, jp, jm] = yv
    coef = _coef(kind, marg, yr)
    g = coef[..., None] * Xb
    if patch is not None:
        g[jb, jp, jm] = coef[jb, jp, jm][:, None] * xv
    if reg:
        g = g + reg * Wm
    return Wm - eta * g


def _risk_rows(kind, reg, X, y, W):
    """F_S(W[b, ...]) on dataset b; W has shape (B, ..., d)."""
    lead = W.shape[1:-1]
    Wf = W.reshape(W.shape[0], -1, W.shape[-1])                  # (B, Q, d)
    marg = np.matmul(Wf, X.transpose(0, 2, 1))                   # (B, Q, n)
    if kind == "Logistic":
        loss = np.logaddexp(0.0, -y[:, None, :] * marg)
    else:
        r = marg - y[:, None, :]
        loss = 0.5 * r * r
    out = loss.mean(-1)
    if reg:
        out = out + 0.5 * reg * (Wf * Wf).sum(-1)
    return out.reshape((W.shape[0],) + lead)


def _example_stats(kind, reg, X, y, xsq, w):
    """Per-example loss and gradient norm, and the full gradient, at w (B, d)."""
    marg = np.matmul(X, w[:, :, None])[..., 0]                   # (B, n)
    if kind == "Logistic":
        loss = np.logaddexp(0.0, -y * marg)
        coef = -y * special.expit(-y * marg)
    else:
        coef = marg - y
        loss = 0.5 * coef * coef
    wsq = (w * w).sum(-1)[:, None]
    if reg:
        loss = loss + 0.5 * reg * wsq
        gsq = coef * coef * xsq + 2.0 * reg * coef * marg + reg * reg * wsq
    else:
        gsq = coef * coef * xsq
    gnorm = np.sqrt(np.maximum(gsq, 0.0))
    full = np.matmul(coef[:, None, :], X)[:, 0, :] / X.shape[1] + reg * w
    return loss, gnorm, gsq, full


def run_batch(
    kind: str,
    reg: float,
    X: np.ndarray,
    y: np.ndarray,
    block: np.ndarray,
    etas: np.ndarray,
    *,
    Xp: Optional[np.ndarray] = None,
    yp: Optional[np.ndarray] = None,
    repl: Optional[np.ndarray] = None,
    w0: Optional[np.ndarray] = None,
    weight_offset: float = 0.0,
    track: Optional[Tracking] = None,
) -> EngineResult:
    """Run coupled local-SGD chains.

    ``block`` has shape (B, R, M, K) and ``etas`` shape (R, K). Row 0 of every
    replicate must be the unmodified dataset when any base-row tracking is on.
    """
    track = track or Tracking()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B, n, d = X.shape
    _, R, M, K = block.shape
    etas = np.asarray(etas, dtype=np.float64).reshape(R, K)
    if repl is None:
        repl = -np.ones((B, 1), dtype=np.int64)
    repl = np.asarray(repl, dtype=np.int64)
    P = repl.shape[1]
    if w0 is None:
        W = np.zeros((B, P, d))
    else:
        W = np.array(np.broadcast_to(w0, (B, P, d)), dtype=np.float64)

    tail_len = math.ceil(R / 2)
    sum_uniform = np.zeros((B, P, d))
    sum_tail = np.zeros((B, P, d))
    sum_all = np.zeros((B, P, d))
    sum_weighted = np.zeros((B, P, d))
    weight_sum = 0.0

    xsq = (X * X).sum(-1)
    need_stats = track.paths or track.variance or track.grad_norms
    risk = np.zeros((B, R, K, M)) if track.risk else None
    path_grad = np.zeros((B, n)) if track.paths else None
    path_loss = np.zeros((B, n)) if track.paths else None
    frak = np.zeros((B, P)) if track.frak_c else None
    sigma2 = np.zeros(B) if track.variance else None
    gmax = np.zeros(B) if track.variance else None
    dist = np.zeros((B, P, R)) if track.distance else None
    gn_mean = np.zeros((B, R + 1)) if track.grad_norms else None
    gn_max = np.zeros((B, R + 1)) if track.grad_norms else None
    iters = np.zeros((B, P, R + 1, d)) if track.iterates else None
    if track.frak_c:
        bsel = np.arange(B)[:, None]
        rc = np.maximum(repl, 0)
        z_x, z_y = X[bsel, rc], y[bsel, rc]           # z_i per row, (B, P, d)
        zp_x, zp_y = Xp[bsel, rc], yp[bsel, rc]       # z'_i per row
        is_var = repl >= 0

    def stats_at(w, col):
        loss, gnorm, gsq, full = _example_stats(kind, reg, X, y, xsq, w)
        if track.variance:
            var = gsq.mean(-1) - (full * full).sum(-1)
            np.maximum(sigma2, var, out=sigma2)
            np.maximum(gmax, gnorm.max(-1), out=gmax)
        if track.grad_norms and col is not None:
            gn_mean[:, col] = gnorm.mean(-1)
            gn_max[:, col] = gnorm.max(-1)
        return loss, gnorm

    for r in range(R):
        if iters is not None:
            iters[:, :, r] = W
        if r >= R - tail_len:
            sum_tail += W
        sum_uniform += W
        Wm = W[:, :, None, :]                                    # chains share w_r at t = 1
        bsel = np.arange(B)[:, None]
        for t in range(K):
            eta = etas[r, t]
            wt = weight_offset + r * K + t + 1
            weight_sum += wt
            msum = M * W if t == 0 else Wm.sum(2)
            sum_all += msum
            sum_weighted += wt * msum
            if risk is not None:
                if t == 0:
                    risk[:, r, 0, :] = _risk_rows(kind, reg, X, y, W[:, 0])[:, None]
                else:
                    risk[:, r, t, :] = _risk_rows(kind, reg, X, y, Wm[:, 0])
            if need_stats and t == 0:
                loss, gnorm = stats_at(W[:, 0], r)
                if track.paths:
                    path_grad += eta * gnorm
                    path_loss += eta * loss
            idx = block[:, r, :, t]
            Xb = X[bsel, idx][:, None]                           # (B, 1, M, d)
            yb = y[bsel, idx][:, None]
            patch = _patches(Xp, yp, repl, idx)
            if frak is not None:
                Wf = np.broadcast_to(Wm, (B, P, M, d))
                g0 = per_example_grad(kind, reg, Wf[:, :1], z_x[:, :, None, :], z_y[:, :, None])
                g1 = per_example_grad(kind, reg, Wf, zp_x[:, :, None, :], zp_y[:, :, None])
                diff = g0 - g1
                c = np.sqrt((diff * diff).sum(-1)).sum(-1)       # sum over machines
                frak += np.where(is_var, eta * c, 0.0)
            Wm = sgd_substeps(kind, reg, Wm, Xb, yb, eta, patch)
        W = Wm.sum(2) / M
        if dist is not None:
            diff = W - W[:, :1]
            dist[:, :, r] = np.sqrt((diff * diff).sum(-1))

    if iters is not None:
        iters[:, :, R] = W
    if track.grad_norms or track.variance:
        stats_at(W[:, 0], R if track.grad_norms else None)

    final_risk = None
    if track.risk:
        final_risk = _final_risk_rows(kind, reg, X, y, Xp, yp, repl, W)

    return EngineResult(
        final=W,
        avg_uniform=sum_uniform / R,
        avg_tail=sum_tail / tail_len,
        avg_local_all=sum_all / (M * K * R),
        avg_local_weighted=sum_weighted / (M * weight_sum),
        weight_sum=weight_sum,
        risk=risk,
        final_risk=final_risk,
        path_grad=path_grad,
        path_loss=path_loss,
        frak_c=frak,
        sigma2=sigma2,
        gmax=gmax,
        distance=dist,
        grad_norm_mean=gn_mean,
        grad_norm_max=gn_max,
        iterates=iters,
    )


def _final_risk_rows(kind, reg, X, y, Xp, yp, repl, W):
    """F_{S^(i)} of each row's final iterate on the row's own dataset."""
    out = _risk_rows(kind, reg, X, y, W)                          # (B, P) on S
    if Xp is None:
        return out
    B, n, _ = X.shape
    jb, jp = np.nonzero(repl >= 0)
    if jb.size == 0:
        return out
    i = repl[jb, jp]
    w = W[jb, jp]
    old = per_example_loss(kind, 0.0, w, X[jb, i], y[jb, i])
    new = per_example_loss(kind, 0.0, w, Xp[jb, i], yp[jb, i])
    out[jb, jp] += (new - old) / n
    return out
