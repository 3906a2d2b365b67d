"""Collapsed and uncollapsed variational objectives for sparse GP regression.

All bounds here share one structure: a Gaussian fit term that uses the
low-rank surrogate Q = Kfu Kuu^-1 Kuf in place of Kff, minus a penalty
that charges for the conditional gap D = Kff - Q.  The family differs
only in how much of D the penalty keeps:

    SGPR         trace penalty, diag(D) / (2 sigma2)
    Spherical    one shared scalar scale on D's diagonal
    T-SGPR       one scale per point (log(1 + d_nn / sigma2) penalty)
    SharedBlock  one scale matrix shared across equal-size blocks
    BT-SGPR      one scale matrix per block (log det penalty)

Each collapsed form equals the corresponding uncollapsed evidence lower
bound at the optimal Gaussian q(u); both routes are implemented and the
tests hold them together.  A dense oracle over arbitrary PSD scalings C
of the full conditional covariance backs the optimality claims.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .kernels import kernel_diag, kernel_matrix
from .linalg import BlockNoise, CholeskyFactor, LowRankGaussian, chol
from .model import GaussianQU, ModelState, Partition

# Dense oracles refuse anything bigger than this.
DENSE_CAP = 2000

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class BoundBreakdown:
    """Objective value split into its fit and penalty parts.

    total = fit_term + regularizer.  fit_term is the Gaussian marginal
    (or expected log-likelihood plus -KL for uncollapsed forms) and
    regularizer collects the gap penalties, so tightening claims can be
    checked term by term.  jitter_used is the largest diagonal jitter
    any factorization in the evaluation needed.
    """

    total: float
    fit_term: float
    regularizer: float
    jitter_used: float = 0.0


class PreparedBound:
    """Kernel and Cholesky work shared by every objective at one state.

    Holds Lu (factor of Kuu), the whitened cross term V = Lu^-1 Kuf,
    and the clamped diagonal of the conditional gap D = Kff - V^T V.
    Dense D blocks are cut on demand; the full N x N gap is never built
    by the bounds themselves.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, state: ModelState):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-d, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        self.x = x
        self.y = y
        self.state = state
        self.luu = chol(kernel_matrix(state.inducing, state.inducing, state.kernel))
        self.v = self.luu.half_solve(kernel_matrix(state.inducing, x, state.kernel))
        raw = kernel_diag(x, state.kernel) - np.sum(self.v * self.v, axis=0)
        self.diag_clamp = float(max(0.0, -raw.min())) if raw.size else 0.0
        self.gap_diag = np.maximum(raw, 0.0)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def sigma2(self) -> float:
        return self.state.noise.noise_variance

    def block_gap(self, idx: np.ndarray) -> np.ndarray:
        """Dense conditional-gap block D[idx, idx] with the clamped diagonal."""
        vb = self.v[:, idx]
        d = kernel_matrix(self.x[idx], self.x[idx], self.state.kernel) - vb.T @ vb
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, self.gap_diag[idx])
        return d

    def fit_gaussian(self, noise: BlockNoise) -> LowRankGaussian:
        return LowRankGaussian(self.luu, self.v, noise)

    def projector_t(self) -> np.ndarray:
        """A^T = Kuu^-1 Kuf, shape (M, N); A maps u to the prior mean of f."""
        return self.luu.half_solve_t(self.v)


def prepare(x: np.ndarray, y: np.ndarray, state: ModelState) -> PreparedBound:
    return PreparedBound(x, y, state)


def exact_lml(x: np.ndarray, y: np.ndarray, state: ModelState) -> BoundBreakdown:
    """Dense log marginal likelihood log N(y; 0, Kff + sigma2 I)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    if n > DENSE_CAP:
        raise ValueError(f"exact_lml is dense; refusing N={n} > {DENSE_CAP}")
    kff = kernel_matrix(x, x, state.kernel)
    lk = chol(kff + state.noise.noise_variance * np.eye(n))
    w = lk.half_solve(y)
    total = -0.5 * (n * _LOG_2PI + lk.logdet() + float(w @ w))
    return BoundBreakdown(total, total, 0.0, lk.jitter_used)


def _collapsed(prep: PreparedBound, regularizer: float, extra_jitter: float = 0.0):
    gauss = prep.fit_gaussian(BlockNoise(sigma2=prep.sigma2))
    fit = gauss.logpdf(prep.y)
    jit = max(gauss.jitter_used, extra_jitter)
    return BoundBreakdown(fit + regularizer, fit, regularizer, jit)


def sgpr_collapsed(x, y, state: ModelState) -> BoundBreakdown:
    """Collapsed bound with the plain trace penalty sum_n d_nn / (2 sigma2)."""
    prep = prepare(x, y, state)
    reg = -0.5 * float(np.sum(prep.gap_diag)) / prep.sigma2
    return _collapsed(prep, reg)


def tsgpr_collapsed(x, y, state: ModelState) -> BoundBreakdown:
    """Collapsed bound with a per-point scale, penalty sum_n log(1 + d_nn/sigma2)/2."""
    prep = prepare(x, y, state)
    reg = -0.5 * float(np.sum(np.log1p(prep.gap_diag / prep.sigma2)))
    return _collapsed(prep, reg)


def tsgpr_optimal_scales(x, y, state: ModelState) -> np.ndarray:
    """Per-point optimal scales sigma2 / (sigma2 + d_nn), in (0, 1]."""
    prep = prepare(x, y, state)
    return prep.sigma2 / (prep.sigma2 + prep.gap_diag)


def btsgpr_collapsed(x, y, state: ModelState, partition: Partition) -> BoundBreakdown:
    """Collapsed bound with one scale matrix per block, log-det penalty."""
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    reg = 0.0
    jit = 0.0
    for idx in partition.blocks:
        lb = chol(np.eye(idx.size) + prep.block_gap(idx) / prep.sigma2)
        reg -= 0.5 * lb.logdet()
        jit = max(jit, lb.jitter_used)
    return _collapsed(prep, reg, jit)


def btsgpr_optimal_scales(x, y, state: ModelState, partition: Partition) -> List[np.ndarray]:
    """Per-block optimal scale matrices (I + D_bb / sigma2)^-1."""
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    out = []
    for idx in partition.blocks:
        lb = chol(np.eye(idx.size) + prep.block_gap(idx) / prep.sigma2)
        out.append(lb.solve(np.eye(idx.size)))
    return out


def btsgpr_parametric(
    x, y, state: ModelState, partition: Partition, scales: List[np.ndarray]
) -> BoundBreakdown:
    """Block bound at explicit PSD scale matrices, before optimizing them out.

    Penalty per block: tr(M_b D_bb)/(2 sigma2) + (tr M_b - log det M_b - N_b)/2.
    Maximized over M_b it reproduces btsgpr_collapsed.
    """
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    if len(scales) != partition.num_blocks:
        raise ValueError("need one scale matrix per block")
    reg = 0.0
    jit = 0.0
    for idx, mb in zip(partition.blocks, scales):
        mb = np.asarray(mb, dtype=float)
        if mb.shape != (idx.size, idx.size):
            raise ValueError("scale matrix shape does not match its block")
        lm = chol(mb)
        jit = max(jit, lm.jitter_used)
        reg -= 0.5 * (
            float(np.sum(mb * prep.block_gap(idx))) / prep.sigma2
            + float(np.trace(mb))
            - lm.logdet()
            - idx.size
        )
    return _collapsed(prep, reg, jit)


def sharedblock_collapsed(x, y, state: ModelState, partition: Partition) -> BoundBreakdown:
    """Collapsed bound with one scale matrix shared by all equal-size blocks."""
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    sizes = set(partition.block_sizes)
    if len(sizes) != 1:
        raise ValueError("SharedBlock requires equal block sizes")
    nb = sizes.pop()
    b = partition.num_blocks
    avg = np.zeros((nb, nb))
    for idx in partition.blocks:
        avg += prep.block_gap(idx)
    avg /= b
    lb = chol(np.eye(nb) + avg / prep.sigma2)
    reg = -0.5 * b * lb.logdet()
    return _collapsed(prep, reg, lb.jitter_used)


def sharedblock_optimal_scale(x, y, state: ModelState, partition: Partition) -> np.ndarray:
    """The shared optimal scale (I + mean_b D_bb / sigma2)^-1."""
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    sizes = set(partition.block_sizes)
    if len(sizes) != 1:
        raise ValueError("SharedBlock requires equal block sizes")
    nb = sizes.pop()
    avg = np.zeros((nb, nb))
    for idx in partition.blocks:
        avg += prep.block_gap(idx)
    avg /= partition.num_blocks
    return chol(np.eye(nb) + avg / prep.sigma2).solve(np.eye(nb))


def spherical_collapsed(x, y, state: ModelState) -> BoundBreakdown:
    """Collapsed bound with a single scalar scale; SharedBlock at block size 1."""
    prep = prepare(x, y, state)
    mean_gap = float(np.mean(prep.gap_diag))
    reg = -0.5 * prep.n * float(np.log1p(mean_gap / prep.sigma2))
    return _collapsed(prep, reg)


def spherical_optimal_scale(x, y, state: ModelState) -> float:
    """The single optimal scale 1 / (1 + mean_n d_nn / sigma2)."""
    prep = prepare(x, y, state)
    return float(1.0 / (1.0 + np.mean(prep.gap_diag) / prep.sigma2))


def general_c_oracle(x, y, state: ModelState, c: np.ndarray) -> BoundBreakdown:
    """Dense bound over an arbitrary PSD replacement C for the gap D.

    total = log N(y; 0, Q + sigma2 I)
            - tr[(D^-1 + I/sigma2) C] / 2 - log(|D| / |C|) / 2 + N / 2.

    D is factorized with the jitter ladder, so the oracle is only
    trustworthy when D is comfortably nonsingular.  Maximized over C it
    lands on C* = (D^-1 + I/sigma2)^-1, the single-block log-det bound.
    """
    prep = prepare(x, y, state)
    n = prep.n
    if n > DENSE_CAP:
        raise ValueError(f"general_c_oracle is dense; refusing N={n} > {DENSE_CAP}")
    c = np.asarray(c, dtype=float)
    if c.shape != (n, n):
        raise ValueError(f"C must be ({n}, {n}), got {c.shape}")
    d = prep.block_gap(np.arange(n))
    ld = chol(d)
    lc = chol(c)
    trace = float(np.sum(ld.solve(c) * np.eye(n))) + float(np.trace(c)) / prep.sigma2
    reg = -0.5 * trace - 0.5 * (ld.logdet() - lc.logdet()) + 0.5 * n
    return _collapsed(prep, reg, max(ld.jitter_used, lc.jitter_used))


def general_c_optimum(x, y, state: ModelState) -> np.ndarray:
    """The oracle's maximizer C* = (D^-1 + I/sigma2)^-1, computed densely."""
    prep = prepare(x, y, state)
    n = prep.n
    if n > DENSE_CAP:
        raise ValueError(f"general_c_optimum is dense; refusing N={n} > {DENSE_CAP}")
    d = prep.block_gap(np.arange(n))
    ld = chol(d)
    prec = ld.solve(np.eye(n)) + np.eye(n) / prep.sigma2
    cstar = chol(prec).solve(np.eye(n))
    return 0.5 * (cstar + cstar.T)


def optimal_qu(x, y, state: ModelState, noise: Optional[BlockNoise] = None) -> GaussianQU:
    """The q(u) maximizing the uncollapsed bound whose likelihood noise is R.

    q(u) is the exact posterior of u under y = A u + e, e ~ N(0, R),
    with A = Kfu Kuu^-1 and prior u ~ N(0, Kuu).  Default R = sigma2 I.
    """
    prep = prepare(x, y, state)
    if noise is None:
        noise = BlockNoise(sigma2=prep.sigma2)
    mean, cov_chol = prep.fit_gaussian(noise).posterior(prep.y)
    return GaussianQU(mean=mean, cov_chol=cov_chol)


def kl_qu(q: GaussianQU, state: ModelState) -> float:
    """KL[q(u) || N(0, Kuu)] for a Gaussian q."""
    luu = chol(kernel_matrix(state.inducing, state.inducing, state.kernel))
    if luu.size != q.dim:
        raise ValueError("q(u) dimension does not match the inducing set")
    half = luu.half_solve(q.cov_chol.lower)
    trace = float(np.sum(half * half))
    a = luu.half_solve(q.mean)
    return 0.5 * (
        trace + float(a @ a) - q.dim + luu.logdet() - q.cov_chol.logdet()
    )


_PENALTIES = ("trace", "diag", "logdet", "shared", "spherical")
_SEPARABLE_PENALTIES = ("trace", "diag", "logdet")


def _check_partition(prep: PreparedBound, partition: Partition):
    if partition.n != prep.n:
        raise ValueError(
            f"partition covers {partition.n} points but data has {prep.n}"
        )


def _block_penalty(prep: PreparedBound, idx: np.ndarray, penalty: str):
    """Per-block gap penalty and the jitter it needed."""
    if penalty == "trace":
        return 0.5 * float(np.sum(prep.gap_diag[idx])) / prep.sigma2, 0.0
    if penalty == "diag":
        return 0.5 * float(np.sum(np.log1p(prep.gap_diag[idx] / prep.sigma2))), 0.0
    lb = chol(np.eye(idx.size) + prep.block_gap(idx) / prep.sigma2)
    return 0.5 * lb.logdet(), lb.jitter_used


def vi_uncollapsed(
    x,
    y,
    state: ModelState,
    partition: Partition,
    q: GaussianQU,
    penalty: str = "logdet",
) -> BoundBreakdown:
    """Uncollapsed evidence lower bound at an explicit Gaussian q(u).

    total = -KL[q || p] + sum_b E_q[log N(y_b; A_b u, sigma2 I)] - penalty.

    penalty selects the gap charge: "trace" (sum of d_nn / 2 sigma2,
    the plain collapsed bound's partner), "diag" (per-point
    log(1 + d_nn/sigma2)/2, the per-point bound's, valid under any
    grouping of the sum), "logdet" (per-block log det(I + D_bb/sigma2)/2,
    the block bound's partner), "shared" (one averaged log-det across
    equal-size blocks), or "spherical" (a single whole-dataset scale).
    """
    if penalty not in _PENALTIES:
        raise ValueError(f"penalty must be one of {_PENALTIES}, got {penalty!r}")
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    if q.dim != state.num_inducing:
        raise ValueError("q(u) dimension does not match the inducing set")

    a_mean = prep.v.T @ prep.luu.half_solve(q.mean)
    h = prep.v.T @ prep.luu.half_solve(q.cov_chol.lower)
    row_tr = np.sum(h * h, axis=1)

    kl = kl_qu(q, state)
    fit = 0.0
    jit = prep.luu.jitter_used
    pen_total = 0.0
    s2 = prep.sigma2
    separable = penalty in _SEPARABLE_PENALTIES
    for idx in partition.blocks:
        resid = prep.y[idx] - a_mean[idx]
        fit += -0.5 * (
            idx.size * (_LOG_2PI + np.log(s2))
            + float(resid @ resid) / s2
            + float(np.sum(row_tr[idx])) / s2
        )
        if separable:
            pen, pj = _block_penalty(prep, idx, penalty)
            pen_total += pen
            jit = max(jit, pj)
    if penalty == "shared":
        sizes = set(partition.block_sizes)
        if len(sizes) != 1:
            raise ValueError("shared penalty requires equal block sizes")
        nb = sizes.pop()
        avg = np.zeros((nb, nb))
        for idx in partition.blocks:
            avg += prep.block_gap(idx)
        avg /= partition.num_blocks
        lb = chol(np.eye(nb) + avg / s2)
        pen_total = 0.5 * partition.num_blocks * lb.logdet()
        jit = max(jit, lb.jitter_used)
    elif penalty == "spherical":
        mean_gap = float(np.mean(prep.gap_diag))
        pen_total = 0.5 * prep.n * float(np.log1p(mean_gap / s2))

    total = -kl + fit - pen_total
    return BoundBreakdown(total, fit - kl, -pen_total, jit)


def vi_stochastic(
    x,
    y,
    state: ModelState,
    partition: Partition,
    q: GaussianQU,
    block_index: int,
    penalty: str = "logdet",
) -> float:
    """Single-block estimator of vi_uncollapsed: -KL + B * (E_b - penalty_b).

    Averaged over the uniform block index it reproduces the full bound;
    shared and spherical penalties are not block-separable, so only
    "trace", "diag" and "logdet" are accepted.
    """
    if penalty not in _SEPARABLE_PENALTIES:
        raise ValueError("stochastic estimator needs a block-separable penalty")
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    idx = partition.blocks[block_index]
    a_mean = prep.v.T @ prep.luu.half_solve(q.mean)
    h = prep.v.T @ prep.luu.half_solve(q.cov_chol.lower)
    s2 = prep.sigma2
    resid = prep.y[idx] - a_mean[idx]
    e_b = -0.5 * (
        idx.size * (_LOG_2PI + np.log(s2))
        + float(resid @ resid) / s2
        + float(np.sum(h[idx] * h[idx])) / s2
    )
    pen, _ = _block_penalty(prep, idx, penalty)
    return -kl_qu(q, state) + partition.num_blocks * (e_b - pen)


def uncollapsed_qu_gradient(
    x,
    y,
    state: ModelState,
    partition: Partition,
    q: GaussianQU,
    block_index: Optional[int] = None,
):
    """Gradient of the uncollapsed bound in (mean, cov factor) of q(u).

    With block_index the gradient is of the single-block estimator
    (KL part exact, data part upweighted by B); otherwise of the full
    bound.  The gap penalties do not touch q, so the penalty choice
    does not matter here.  Returns (d_mean, d_lower) with d_lower
    already masked to the lower triangle.
    """
    prep = prepare(x, y, state)
    _check_partition(prep, partition)
    if block_index is None:
        blocks = partition.blocks
        weight = 1.0
    else:
        blocks = [partition.blocks[block_index]]
        weight = float(partition.num_blocks)
    s2 = prep.sigma2
    at = prep.projector_t()  # A^T, shape (M, N)
    a_mean = at.T @ q.mean

    kuu_inv_mean = prep.luu.solve(q.mean)
    d_mean = -kuu_inv_mean
    m = state.num_inducing
    s_inv = q.cov_chol.solve(np.eye(m))
    kuu_inv = prep.luu.solve(np.eye(m))
    d_s = 0.5 * (s_inv - kuu_inv)
    for idx in blocks:
        atb = at[:, idx]
        d_mean = d_mean + weight * (atb @ (prep.y[idx] - a_mean[idx])) / s2
        d_s = d_s - 0.5 * weight * (atb @ atb.T) / s2
    d_s = 0.5 * (d_s + d_s.T)
    d_lower = 2.0 * d_s @ q.cov_chol.lower
    return d_mean, np.tril(d_lower)
