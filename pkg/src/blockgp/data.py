"""Datasets: CSV loading, standardization, splits, and initialization.

The CSV reader accepts plain numeric tables with or without a header
row.  By default the last column is the regression target; a named
target column can be picked when a header is present.  Constant feature
columns are dropped (their lengthscales would be unidentifiable) with a
warning.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from .kernels import KernelParams, NoiseParam
from .model import ModelState


class DataFormatError(ValueError):
    """CSV contents that cannot become a numeric table; says where."""


class EmptyDatasetError(DataFormatError):
    """A CSV with no data rows (or none left after dropping columns)."""


class DegenerateColumnError(ValueError):
    """A constant column where standardization needs spread."""


@dataclass(frozen=True)
class StandardizationStats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    column_names: Optional[List[str]] = None
    stats: Optional[StandardizationStats] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-d, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def _looks_like_header(row: List[str]) -> bool:
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _read_numeric_table(path: str):
    """Shared CSV guts: header autodetect, cell parsing, shape checks.

    Returns (values, names, start) with names None for headerless
    files and start the first data row's 1-based line number.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    names: Optional[List[str]] = None
    start = 0
    if _looks_like_header(rows[0]):
        names = [c.strip() for c in rows[0]]
        start = 1
    body = rows[start:]
    if not body:
        raise EmptyDatasetError(f"{path}: header but no data rows")
    width = len(body[0])
    values = np.empty((len(body), width))
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataFormatError(
                f"{path}: row {start + i + 1} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {start + i + 1}, column {j + 1}: "
                    f"cannot parse {cell.strip()!r} as a number"
                ) from None
    if names is not None and len(names) != width:
        raise DataFormatError(
            f"{path}: header has {len(names)} names for {width} columns"
        )
    return values, names, start + 1


def load_features(path: str) -> Tuple[np.ndarray, Optional[List[str]]]:
    """Read a numeric CSV (optional header) as a plain feature matrix."""
    values, names, _ = _read_numeric_table(path)
    return values, names


def load_csv(path: str, target_column: Optional[str] = None) -> Dataset:
    """Read a numeric CSV into a Dataset.

    Header row is auto-detected (any non-numeric cell in the first
    row).  The target is the named column if given, else the last one.
    Constant feature columns are dropped with a warning.  Malformed
    cells raise DataFormatError naming the row and column.
    """
    values, names, _ = _read_numeric_table(path)
    width = values.shape[1]
    if width < 2:
        raise DataFormatError(f"{path}: need at least two columns (features, target)")

    if target_column is not None:
        if names is None:
            raise DataFormatError(
                f"{path}: target column {target_column!r} needs a header row"
            )
        if target_column not in names:
            raise DataFormatError(
                f"{path}: no column named {target_column!r}; have {names}"
            )
        t = names.index(target_column)
    else:
        t = width - 1
    feature_idx = [j for j in range(width) if j != t]
    x = values[:, feature_idx]
    y = values[:, t]
    feature_names = [names[j] for j in feature_idx] if names is not None else None

    keep = [j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 0.0]
    if len(keep) < x.shape[1]:
        dropped = [j for j in range(x.shape[1]) if j not in keep]
        label = (
            [feature_names[j] for j in dropped]
            if feature_names is not None
            else dropped
        )
        warnings.warn(f"{path}: dropping constant feature columns {label}")
        x = x[:, keep]
        feature_names = (
            [feature_names[j] for j in keep] if feature_names is not None else None
        )
    if x.shape[1] == 0:
        raise DataFormatError(f"{path}: all feature columns are constant")
    return Dataset(x=x, y=y, column_names=feature_names)


def standardize(data: Dataset) -> Dataset:
    """Shift and scale to zero mean, unit (population) deviation per column."""
    x_mean = data.x.mean(axis=0)
    x_std = data.x.std(axis=0)
    if np.any(x_std == 0.0):
        raise DegenerateColumnError("cannot standardize a constant feature column")
    y_mean = float(data.y.mean())
    y_std = float(data.y.std())
    if y_std == 0.0:
        raise DegenerateColumnError("cannot standardize a constant target")
    stats = StandardizationStats(x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)
    return replace(
        data,
        x=(data.x - x_mean) / x_std,
        y=(data.y - y_mean) / y_std,
        stats=stats,
    )


def apply_standardization(data: Dataset, stats: StandardizationStats) -> Dataset:
    """Standardize with someone else's statistics (for held-out data)."""
    return replace(
        data,
        x=(data.x - stats.x_mean) / stats.x_std,
        y=(data.y - stats.y_mean) / stats.y_std,
        stats=stats,
    )


def destandardize(data: Dataset) -> Dataset:
    """Undo standardize; round-trips to the original values."""
    if data.stats is None:
        raise ValueError("dataset carries no standardization stats")
    s = data.stats
    return replace(data, x=data.x * s.x_std + s.x_mean, y=data.y * s.y_std + s.y_mean, stats=None)


def split(data: Dataset, test_fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded train/test split with floor(N * test_fraction) test points."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    n_test = int(np.floor(data.n * test_fraction))
    perm = np.random.default_rng(seed).permutation(data.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    mk = lambda idx: replace(data, x=data.x[idx], y=data.y[idx])
    return mk(train_idx), mk(test_idx)


def init_lengthscales_median(data: Dataset, subsample: int = 1000, seed: int = 0) -> KernelParams:
    """Kernel init: every lengthscale at the median pairwise distance.

    Distances come from a seeded subsample of at most ``subsample``
    points (the full set, hence the exact median, below that size).
    Signal variance starts at 1.
    """
    if data.n < 2:
        raise ValueError("median-distance init needs at least two points")
    x = data.x
    if x.shape[0] > subsample:
        idx = np.random.default_rng(seed).choice(x.shape[0], subsample, replace=False)
        x = x[idx]
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(x.shape[0], k=1)
    med = float(np.median(dist[iu]))
    if med <= 0.0:
        med = 1.0
    return KernelParams(
        log_lengthscales=np.full(data.dim, np.log(med)),
        log_signal_variance=0.0,
    )


def init_inducing_subset(data: Dataset, num_inducing: int, seed: int = 0) -> np.ndarray:
    """Inducing init: a seeded random subset of the training inputs."""
    if not 1 <= num_inducing <= data.n:
        raise ValueError(f"num_inducing must be in [1, {data.n}], got {num_inducing}")
    idx = np.random.default_rng(seed).choice(data.n, num_inducing, replace=False)
    return data.x[np.sort(idx)].copy()


def init_inducing_kmeans(
    data: Dataset, num_inducing: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6
) -> np.ndarray:
    """Inducing init: k-means centers of the inputs (k-means++ seeding)."""
    if not 1 <= num_inducing <= data.n:
        raise ValueError(f"num_inducing must be in [1, {data.n}], got {num_inducing}")
    x = data.x
    rng = np.random.default_rng(seed)
    centers = np.empty((num_inducing, data.dim))
    centers[0] = x[rng.integers(data.n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for k in range(1, num_inducing):
        total = d2.sum()
        if total <= 0.0:
            centers[k] = x[rng.integers(data.n)]
        else:
            centers[k] = x[rng.choice(data.n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[k]) ** 2, axis=1))
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        assign = dist.argmin(axis=1)
        new_centers = centers.copy()
        for k in range(num_inducing):
            members = x[assign == k]
            if members.shape[0]:
                new_centers[k] = members.mean(axis=0)
        shift = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if shift < tol:
            break
    return centers


def initial_state(
    data: Dataset,
    num_inducing: int,
    seed: int = 0,
    inducing: str = "subset",
    noise_variance: float = 0.1,
    with_m: bool = False,
) -> ModelState:
    """Bundle the standard initializers into a ready ModelState.

    Median-distance lengthscales, unit signal variance, noise variance
    0.1, inducing inputs from a random subset or k-means centers, and
    (with with_m) the scalar gap scale starting at 1.
    """
    kernel = init_lengthscales_median(data, seed=seed)
    if inducing == "subset":
        z = init_inducing_subset(data, num_inducing, seed=seed)
    elif inducing == "kmeans":
        z = init_inducing_kmeans(data, num_inducing, seed=seed)
    else:
        raise ValueError(f"inducing must be 'subset' or 'kmeans', got {inducing!r}")
    return ModelState(
        kernel=kernel,
        noise=NoiseParam(log_noise_variance=float(np.log(noise_variance))),
        inducing=z,
        log_m_scale=0.0 if with_m else None,
    )


def synthetic_1d(n: int, seed: int = 0, noise_std: float = 0.25) -> Dataset:
    """A bumpy 1-d regression set in the spirit of the classic sparse-GP demo."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 6.0, size=n))
    f = np.sin(2.0 * x) + 0.4 * np.cos(5.0 * x) + 0.3 * x
    y = f + noise_std * rng.standard_normal(n)
    return Dataset(x=x[:, None], y=y)
