"""Dense reference computations for the test suite.

Everything here forms full N x N covariances and goes through scipy's
multivariate normal or plain np.linalg calls.  The package never takes
these routes (it works with Cholesky factors of M x M and block-sized
matrices), so agreement between the two is a real check, not a
tautology.
"""

import numpy as np
from scipy.stats import multivariate_normal

from blockgp.kernels import kernel_matrix
from blockgp.model import ModelState, Partition


def mvn_logpdf(y: np.ndarray, cov: np.ndarray) -> float:
    return float(
        multivariate_normal(mean=np.zeros(y.shape[0]), cov=cov).logpdf(y)
    )


def dense_parts(x: np.ndarray, state: ModelState):
    """Kff, the projected covariance Q, and the full conditional gap Kff - Q."""
    kff = kernel_matrix(x, x, state.kernel)
    kuf = kernel_matrix(state.inducing, x, state.kernel)
    kuu = kernel_matrix(state.inducing, state.inducing, state.kernel)
    q = kuf.T @ np.linalg.solve(kuu, kuf)
    q = 0.5 * (q + q.T)
    gap = 0.5 * ((kff - q) + (kff - q).T)
    return kff, q, gap


def dense_exact(x, y, state) -> float:
    kff, _, _ = dense_parts(x, state)
    return mvn_logpdf(y, kff + state.noise.noise_variance * np.eye(y.shape[0]))


def dense_sgpr(x, y, state) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    fit = mvn_logpdf(y, q + s2 * np.eye(y.shape[0]))
    return fit - float(np.trace(gap)) / (2.0 * s2)


def dense_tsgpr(x, y, state) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    fit = mvn_logpdf(y, q + s2 * np.eye(y.shape[0]))
    return fit - 0.5 * float(np.sum(np.log1p(np.diag(gap) / s2)))


def dense_btsgpr(x, y, state, partition: Partition) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    fit = mvn_logpdf(y, q + s2 * np.eye(y.shape[0]))
    pen = 0.0
    for ix in partition.blocks:
        block = gap[np.ix_(ix, ix)]
        pen += 0.5 * float(np.linalg.slogdet(np.eye(ix.size) + block / s2)[1])
    return fit - pen


def dense_sharedblock(x, y, state, partition: Partition) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    fit = mvn_logpdf(y, q + s2 * np.eye(y.shape[0]))
    nb = partition.blocks[0].size
    avg = np.zeros((nb, nb))
    for ix in partition.blocks:
        avg += gap[np.ix_(ix, ix)]
    avg /= partition.num_blocks
    _, ld = np.linalg.slogdet(np.eye(nb) + avg / s2)
    return fit - 0.5 * partition.num_blocks * float(ld)


def dense_spherical(x, y, state) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    n = y.shape[0]
    fit = mvn_logpdf(y, q + s2 * np.eye(n))
    return fit - 0.5 * n * float(np.log1p(np.mean(np.diag(gap)) / s2))


def dense_general_c(x, y, state, c: np.ndarray) -> float:
    """Identity-free evaluation of the free-scale objective at PSD C."""
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    n = y.shape[0]
    fit = mvn_logpdf(y, q + s2 * np.eye(n))
    trace_term = 0.5 * float(np.trace(np.linalg.solve(gap, c))) + 0.5 * float(
        np.trace(c)
    ) / s2
    _, ld_gap = np.linalg.slogdet(gap)
    _, ld_c = np.linalg.slogdet(c)
    return fit - trace_term - 0.5 * (float(ld_gap) - float(ld_c)) + 0.5 * n


def dense_pep(x, y, state, alpha: float, partition: Partition) -> float:
    """Power-EP energy with unit gap scale, via the full covariance."""
    return dense_tpep(x, y, state, alpha, 1.0, partition)


def dense_tpep(x, y, state, alpha: float, m: float, partition: Partition) -> float:
    _, q, gap = dense_parts(x, state)
    s2 = state.noise.noise_variance
    n = y.shape[0]
    blk = np.zeros((n, n))
    pen = 0.0
    for ix in partition.blocks:
        block = gap[np.ix_(ix, ix)]
        blk[np.ix_(ix, ix)] = block
        _, ld = np.linalg.slogdet(np.eye(ix.size) + alpha * m * block / s2)
        pen += float(ld)
    fit = mvn_logpdf(y, q + alpha * m * blk + s2 * np.eye(n))
    return (
        fit
        - (1.0 - alpha) / (2.0 * alpha) * pen
        - n / (2.0 * alpha) * float(np.log1p(alpha * (m - 1.0)))
        + 0.5 * n * float(np.log(m))
    )


def dense_optimal_qu(x, y, state):
    """Textbook Bayes-linear posterior over the inducing values."""
    kuf = kernel_matrix(state.inducing, x, state.kernel)
    kuu = kernel_matrix(state.inducing, state.inducing, state.kernel)
    s2 = state.noise.noise_variance
    b = kuu + kuf @ kuf.T / s2
    mean = kuu @ np.linalg.solve(b, kuf @ y) / s2
    cov = kuu @ np.linalg.solve(b, kuu)
    return mean, 0.5 * (cov + cov.T)


def dense_gp_predict(x_train, y_train, x_test, state, include_noise: bool):
    """Exact GP posterior, the Z = X reference for the sparse predictor."""
    s2 = state.noise.noise_variance
    kff = kernel_matrix(x_train, x_train, state.kernel)
    ktf = kernel_matrix(x_test, x_train, state.kernel)
    ktt = kernel_matrix(x_test, x_test, state.kernel)
    solve = np.linalg.solve(kff + s2 * np.eye(y_train.shape[0]), np.eye(y_train.shape[0]))
    mean = ktf @ solve @ y_train
    var = np.diag(ktt) - np.einsum("ij,jk,ik->i", ktf, solve, ktf)
    if include_noise:
        var = var + s2
    return mean, var
