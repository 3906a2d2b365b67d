"""Sparse GP regression with block-structured variational and power-EP bounds.

The package provides a family of collapsed lower bounds on the log marginal
likelihood of a Gaussian-process regression model with inducing points.  The
bounds differ only in how finely the conditional covariance of the latent
function is scaled: a scalar, a diagonal, a block diagonal, or not at all.
A power-EP variant with a tractable scalar scaling sits alongside, with a
message-passing routine whose fixed point matches the collapsed form.
"""

from .linalg import (
    BlockNoise,
    CholeskyFactor,
    LowRankGaussian,
    NotPositiveDefiniteError,
    chol,
    gauss_logpdf_lowrank,
)
from .kernels import KernelParams, NoiseParam, conditional_gap, kernel_diag, kernel_matrix
from .model import (
    BLOCK_METHODS,
    METHODS,
    ORACLE_METHODS,
    PEP_METHODS,
    VI_METHODS,
    BoundSpec,
    GaussianQU,
    ModelState,
    Partition,
    make_partition,
    merge_pairs,
    singleton_partition,
)
from .bounds_vi import (
    BoundBreakdown,
    btsgpr_collapsed,
    btsgpr_optimal_scales,
    btsgpr_parametric,
    exact_lml,
    general_c_optimum,
    general_c_oracle,
    kl_qu,
    optimal_qu,
    sgpr_collapsed,
    sharedblock_collapsed,
    sharedblock_optimal_scale,
    spherical_collapsed,
    spherical_optimal_scale,
    tsgpr_collapsed,
    tsgpr_optimal_scales,
    uncollapsed_qu_gradient,
    vi_stochastic,
    vi_uncollapsed,
)
from .bounds_pep import (
    FixedPointMismatch,
    FixedPointReport,
    PepConfig,
    PepResult,
    SiteFactor,
    general_pep_oracle,
    pep_collapsed,
    pep_iterate,
    tpep_collapsed,
    tpep_optimal_qu,
    tpep_qu_gradient,
    tpep_stochastic,
    tpep_uncollapsed,
    verify_site_fixed_point,
)
from .training import (
    Diverged,
    EvaluationFailed,
    TrainConfig,
    TrainTrace,
    evaluate_bound,
    finite_difference_gradient,
    fit_collapsed,
    fit_stochastic,
)
from .prediction import PredictiveGaussian, mean_log_likelihood, metrics, predict, rmse
from .data import (
    DataFormatError,
    Dataset,
    DegenerateColumnError,
    EmptyDatasetError,
    StandardizationStats,
    apply_standardization,
    destandardize,
    init_inducing_kmeans,
    init_inducing_subset,
    init_lengthscales_median,
    initial_state,
    load_csv,
    load_features,
    split,
    standardize,
    synthetic_1d,
)

__version__ = "0.1.0"

__all__ = [
    "BLOCK_METHODS",
    "BlockNoise",
    "BoundBreakdown",
    "BoundSpec",
    "CholeskyFactor",
    "DataFormatError",
    "Dataset",
    "DegenerateColumnError",
    "Diverged",
    "EmptyDatasetError",
    "EvaluationFailed",
    "FixedPointMismatch",
    "FixedPointReport",
    "GaussianQU",
    "KernelParams",
    "LowRankGaussian",
    "METHODS",
    "ModelState",
    "NoiseParam",
    "NotPositiveDefiniteError",
    "ORACLE_METHODS",
    "PEP_METHODS",
    "Partition",
    "PepConfig",
    "PepResult",
    "PredictiveGaussian",
    "SiteFactor",
    "StandardizationStats",
    "TrainConfig",
    "TrainTrace",
    "VI_METHODS",
    "apply_standardization",
    "btsgpr_collapsed",
    "btsgpr_optimal_scales",
    "btsgpr_parametric",
    "chol",
    "conditional_gap",
    "destandardize",
    "evaluate_bound",
    "exact_lml",
    "finite_difference_gradient",
    "fit_collapsed",
    "fit_stochastic",
    "gauss_logpdf_lowrank",
    "general_c_optimum",
    "general_c_oracle",
    "general_pep_oracle",
    "init_inducing_kmeans",
    "init_inducing_subset",
    "init_lengthscales_median",
    "initial_state",
    "kernel_diag",
    "kernel_matrix",
    "kl_qu",
    "load_csv",
    "load_features",
    "make_partition",
    "mean_log_likelihood",
    "merge_pairs",
    "metrics",
    "optimal_qu",
    "pep_collapsed",
    "pep_iterate",
    "predict",
    "rmse",
    "sgpr_collapsed",
    "sharedblock_collapsed",
    "sharedblock_optimal_scale",
    "singleton_partition",
    "spherical_collapsed",
    "spherical_optimal_scale",
    "split",
    "standardize",
    "synthetic_1d",
    "tpep_collapsed",
    "tpep_optimal_qu",
    "tpep_qu_gradient",
    "tpep_stochastic",
    "tpep_uncollapsed",
    "tsgpr_collapsed",
    "tsgpr_optimal_scales",
    "uncollapsed_qu_gradient",
    "verify_site_fixed_point",
    "vi_stochastic",
    "vi_uncollapsed",
]
