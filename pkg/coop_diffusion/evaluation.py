"""
Desk-scale metrics: a feature-free Gaussian Frechet distance, whiteness statistics
and mixture mode coverage.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional, Union

import numpy as np
from scipy.linalg import eigh

from .exceptions import ParameterError, ShapeError, UndefinedStatisticError
from .models.mixture import GaussianMixture
from .numerics import RngStream
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
EIGENVALUE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    n: int = 0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True).reshape(-1)
        cov = np.array(self.covariance, dtype=np.float64, copy=True).reshape(mean.shape[0], -1)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f"Covariance must be {mean.shape[0]}x{mean.shape[0]}, got {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOLERANCE * scale:
            raise ParameterError("Covariance is not symmetric")
        if cov.size and np.min(np.linalg.eigvalsh(cov)) < -EIGENVALUE_TOLERANCE * scale:
            raise ParameterError("Covariance is not positive semidefinite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _as_rows(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError("Samples need a leading sample axis")
    return arr.reshape(arr.shape[0], -1)


def fit_gaussian(samples) -> GaussianSummary:
    """
    Sample mean and unbiased covariance of `samples`, shape `(n, *grid_shape)`.
    """
    x = _as_rows(samples)
    n, dim = x.shape
    if n < dim + 1:
        raise ParameterError(f"Need at least dim + 1 = {dim + 1} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianSummary(mean, 0.5 * (cov + cov.T), n)


def _psd_sqrt(matrix: np.ndarray, what: str) -> np.ndarray:
    w, v = eigh(matrix)
    if np.min(w, initial=0.0) < -EIGENVALUE_TOLERANCE:
        logger.warning(
            "Clamped negative eigenvalue %(value)s of %(what)s to 0",
            {"value": float(np.min(w)), "what": what},
        )
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_frechet(a: GaussianSummary, b: GaussianSummary) -> float:
    """
    `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`, the 2-Wasserstein
    distance between the two Gaussians. Computed on raw coordinates, no feature network.
    """
    if a.dim != b.dim:
        raise ShapeError(f"Summaries have different dimensions {a.dim} and {b.dim}")
    sqrt_a = _psd_sqrt(a.covariance, "covariance")
    middle = sqrt_a @ b.covariance @ sqrt_a
    eigenvalues = eigh(0.5 * (middle + middle.T), eigvals_only=True)
    if np.min(eigenvalues, initial=0.0) < -EIGENVALUE_TOLERANCE:
        logger.warning(
            "Clamped negative eigenvalue %(value)s of the cross term to 0",
            {"value": float(np.min(eigenvalues))},
        )
    cross = np.sum(np.sqrt(np.clip(eigenvalues, 0.0, None)))
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    return max(value, 0.0)


def frechet_between(samples_a, samples_b) -> float:
    return gaussian_frechet(fit_gaussian(samples_a), fit_gaussian(samples_b))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if not denom > 0:
        raise UndefinedStatisticError("Correlation is undefined for a zero-variance grid")
    return float(np.sum(a * b) / denom)


def lag1_autocorr(x) -> float:
    """
    Mean of the horizontal and vertical one-pixel-shift Pearson correlations.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ShapeError(f"`lag1_autocorr` needs an [H, W] grid with H, W >= 2, got {x.shape}")
    horizontal = _pearson(x[:, :-1], x[:, 1:])
    vertical = _pearson(x[:-1, :], x[1:, :])
    return 0.5 * (horizontal + vertical)


def mean_lag1_autocorr(grids) -> float:
    grids = np.asarray(grids, dtype=np.float64)
    return float(np.mean([lag1_autocorr(g) for g in grids.reshape((-1,) + grids.shape[-2:])]))


def marginal_variance(grids, mask: Optional[np.ndarray] = None) -> float:
    """
    Variance across draws, per site, averaged over the sites selected by `mask`.
    """
    grids = np.asarray(grids, dtype=np.float64)
    if grids.shape[0] < 2:
        raise ParameterError("Need at least 2 draws for a variance")
    per_site = grids.var(axis=0, ddof=1)
    return float(np.mean(per_site if mask is None else per_site[mask]))


def mixture_occupancy(samples, gm: GaussianMixture) -> np.ndarray:
    """
    Fraction of samples whose nearest component (Mahalanobis distance) is each component.
    """
    x = _as_rows(samples)
    if x.shape[0] == 0:
        raise ParameterError("`mixture_occupancy` needs at least one sample")
    if x.shape[1] != gm.dim:
        raise ShapeError(f"Samples have dimension {x.shape[1]}, mixture has {gm.dim}")
    means = gm.means.reshape(gm.n_components, gm.dim)
    sq = np.einsum("nkd,nkd->nk", x[:, None] - means[None], x[:, None] - means[None])
    nearest = np.argmin(sq / gm.variances[None, :], axis=1)
    return np.bincount(nearest, minlength=gm.n_components) / x.shape[0]


Sampler = Union[GaussianMixture, Callable[[int, RngStream], np.ndarray]]


def self_distance(sampler: Sampler, n: int, rng: RngStream) -> float:
    """
    Frechet distance between two independent `n`-sample draws of the same source;
    the calibration bound sampling tests compare against.
    """
    first, second = rng.split(2)
    if isinstance(sampler, GaussianMixture):
        draw_a, draw_b = sampler.sample(n, first)[0], sampler.sample(n, second)[0]
    else:
        draw_a, draw_b = sampler(n, first), sampler(n, second)
    return frechet_between(draw_a, draw_b)


class MetricRow(NamedTuple):
    run_id: str
    metric: str
    value: float
    n: int
    seed: int


METRIC_COLUMNS = list(MetricRow._fields)


def format_value(value: float) -> str:
    return format(float(value), ".17g")


def metrics_csv(rows: Iterable[MetricRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([row.run_id, row.metric, format_value(row.value), row.n, row.seed])
    return buffer.getvalue()


def write_metrics_csv(path: str, rows: Iterable[MetricRow]) -> List[MetricRow]:
    rows = list(rows)
    atomic_write_text(path, metrics_csv(rows))
    return rows
