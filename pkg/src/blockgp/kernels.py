"""Squared-exponential kernel with per-dimension lengthscales.

k(x, x') = s2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2).

Parameters are stored on log scale so optimizers can move freely in R.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import chol


@dataclass(frozen=True)
class KernelParams:
    log_lengthscales: np.ndarray  # shape (D,)
    log_signal_variance: float

    def __post_init__(self):
        object.__setattr__(
            self, "log_lengthscales",
            np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)),
        )

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))

    @property
    def input_dim(self) -> int:
        return self.log_lengthscales.shape[0]


@dataclass(frozen=True)
class NoiseParam:
    log_noise_variance: float

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))


def _check_inputs(x: np.ndarray, params: KernelParams, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-d (points x dims), got shape {x.shape}")
    if x.shape[1] != params.input_dim:
        raise ValueError(
            f"{name} has {x.shape[1]} columns but the kernel has "
            f"{params.input_dim} lengthscales"
        )
    return x


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix k(x1[i], x2[j]), shape (n1, n2)."""
    x1 = _check_inputs(x1, params, "x1")
    x2 = _check_inputs(x2, params, "x2")
    ell = params.lengthscales
    a = x1 / ell
    b = x2 / ell
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def kernel_diag(x: np.ndarray, params: KernelParams) -> np.ndarray:
    """diag k(x, x), which is constant s2 for this kernel."""
    x = _check_inputs(x, params, "x")
    return np.full(x.shape[0], params.signal_variance)


def conditional_gap(x: np.ndarray, z: np.ndarray, params: KernelParams):
    """Conditional covariance gap D = Kff - Kfu Kuu^-1 Kuf at inputs x.

    Returns (D, clamp) where D has its diagonal clamped at zero and
    clamp is the largest negative diagonal magnitude removed.  Kuu is
    factorized with the jitter ladder.  With no inducing points D is
    just Kff.
    """
    x = _check_inputs(x, params, "x")
    z = _check_inputs(z, params, "z")
    kff = kernel_matrix(x, x, params)
    if z.shape[0] == 0:
        return kff, 0.0
    luu = chol(kernel_matrix(z, z, params))
    w = luu.half_solve(kernel_matrix(z, x, params))
    d = kff - w.T @ w
    d = 0.5 * (d + d.T)
    diag = np.diag(d).copy()
    clamp = float(max(0.0, -diag.min())) if diag.size else 0.0
    np.fill_diagonal(d, np.maximum(diag, 0.0))
    return d, clamp
