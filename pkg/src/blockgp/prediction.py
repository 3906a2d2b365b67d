"""Predictive distribution and held-out metrics.

Every method in the package summarizes its posterior as a Gaussian
q(u) = N(mean, S) over the inducing values, so prediction is shared:

    mean(x*) = k*u Kuu^-1 mean
    var(x*)  = k** - k*u Kuu^-1 ku* + a*^T S a*,   a* = Kuu^-1 ku*

plus the noise variance when predicting observations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernels import kernel_diag, kernel_matrix
from .linalg import chol
from .model import GaussianQU, ModelState

# Round-off can push a variance a hair below zero; anything worse than
# this (relative to the kernel variance) earns a warning.
_NEGATIVE_VAR_TOL = 1e-10


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: np.ndarray
    variance: np.ndarray
    clamped: int = 0  # entries clipped to zero beyond round-off tolerance


def predict(
    x_test: np.ndarray,
    state: ModelState,
    q: GaussianQU,
    include_noise: bool = True,
) -> PredictiveGaussian:
    """Predictive mean and variance at x_test for a Gaussian q(u)."""
    x_test = np.asarray(x_test, dtype=float)
    if q.dim != state.num_inducing:
        raise ValueError("q(u) dimension does not match the inducing set")
    luu = chol(kernel_matrix(state.inducing, state.inducing, state.kernel))
    v = luu.half_solve(kernel_matrix(state.inducing, x_test, state.kernel))
    # a*^T S a* with a* = Kuu^-1 ku*: whiten S's factor through Kuu.
    w = luu.half_solve_t(v)  # (M, N*) columns are a*
    mean = w.T @ q.mean
    h = q.cov_chol.lower.T @ w
    var = kernel_diag(x_test, state.kernel) - np.sum(v * v, axis=0) + np.sum(h * h, axis=0)
    bad = int(np.sum(var < -_NEGATIVE_VAR_TOL * state.kernel.signal_variance))
    if bad:
        warnings.warn(
            f"{bad} predictive variances below round-off tolerance were clamped",
            RuntimeWarning,
        )
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + state.noise.noise_variance
    return PredictiveGaussian(mean=mean, variance=var, clamped=bad)


def rmse(pred: PredictiveGaussian, y_true: np.ndarray) -> float:
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    return float(np.sqrt(np.mean((pred.mean - y_true) ** 2)))


def mean_log_likelihood(pred: PredictiveGaussian, y_true: np.ndarray) -> float:
    """Average predictive log density, which needs the noisy variance."""
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    var = pred.variance
    if np.any(var <= 0.0):
        raise ValueError("mean_log_likelihood needs strictly positive variances; "
                         "predict with include_noise=True")
    return float(
        np.mean(-0.5 * (np.log(2.0 * np.pi * var) + (y_true - pred.mean) ** 2 / var))
    )


def metrics(pred: PredictiveGaussian, y_true: np.ndarray) -> dict:
    return {
        "rmse": rmse(pred, y_true),
        "mean_ll": mean_log_likelihood(pred, y_true),
    }
