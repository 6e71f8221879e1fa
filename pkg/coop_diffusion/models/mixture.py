"""
Closed-form Gaussian-mixture oracle.

For data `x0 ~ sum_k w_k N(mu_k, s_k^2 I)` the diffused marginal is
`p_t = sum_k w_k N(sqrt(ab_t) mu_k, (ab_t s_k^2 + 1 - ab_t) I)`, and the optimal
epsilon-predictor is `-sqrt(1 - ab_t) * grad log p_t`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from ..codecs import LinearCodec, encode, upsample_pixel
from ..exceptions import ParameterError, ShapeError
from ..numerics import Grid, NoiseSchedule, RngStream, Shape
from ..utils import split_batch
from .base import UNCONDITIONAL, BaseDenoiser, Condition

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12


def _check_weights(weights, n_components: int, what: str) -> np.ndarray:
    weights = np.array(weights, dtype=np.float64, copy=True).reshape(-1)
    if weights.shape != (n_components,):
        raise ParameterError(f"{what} needs {n_components} entries, got {weights.shape[0]}")
    if np.any(weights <= 0):
        raise ParameterError(f"{what} must be strictly positive")
    if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
        raise ParameterError(f"{what} must sum to 1, got {weights.sum()!r}")
    weights.setflags(write=False)
    return weights


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64, copy=True)
        variances = np.array(self.variances, dtype=np.float64, copy=True).reshape(-1)
        if means.ndim < 2:
            raise ShapeError("`means` must have shape (n_components, *grid_shape)")
        k = means.shape[0]
        weights = _check_weights(self.weights, k, "`weights`")
        if variances.shape != (k,):
            raise ParameterError(f"`variances` needs {k} entries")
        if np.any(variances <= 0) or not np.all(np.isfinite(means)):
            raise ParameterError("`variances` must be strictly positive and `means` finite")
        means.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @classmethod
    def single(cls, mean, variance: float) -> "GaussianMixture":
        return cls(np.ones(1), np.asarray(mean, dtype=np.float64)[None], np.array([variance]))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def shape(self) -> Shape:
        return tuple(self.means.shape[1:])

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def sample(self, n: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
        """
        Draws `n` samples; returns `(samples, component_index)`.
        """
        u = rng.uniform(n)
        components = np.searchsorted(np.cumsum(self.weights), u, side="right")
        components = np.minimum(components, self.n_components - 1)
        noise = rng.normal((n,) + self.shape)
        std = np.sqrt(self.variances[components]).reshape((n,) + (1,) * len(self.shape))
        return self.means[components] + std * noise, components

    def pushforward(self, codec: LinearCodec) -> "GaussianMixture":
        """
        The same mixture expressed in a scaled-orthogonal codec's latent space.
        """
        scale = codec.orthogonal_scale()
        if scale is None or codec.pixel_shape != self.shape:
            raise ParameterError(
                f"Mixture can only be pushed through a scaled-orthogonal codec on shape "
                f"{self.shape}; `{codec.name}` is not one"
            )
        return GaussianMixture(self.weights, encode(codec, self.means), self.variances * scale**2)

    def upsample(self, factor: int) -> "GaussianMixture":
        """
        Matched higher-resolution mixture: means are pixel-upsampled, variances kept.
        """
        return GaussianMixture(self.weights, upsample_pixel(self.means, factor), self.variances)

    def with_weights(self, weights) -> "GaussianMixture":
        return GaussianMixture(weights, self.means, self.variances)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GaussianMixture":
        return cls(
            np.asarray(data["weights"], dtype=np.float64),
            np.asarray(data["means"], dtype=np.float64),
            np.asarray(data["variances"], dtype=np.float64),
        )


def _diffused_terms(gm: GaussianMixture, z_t, t: int, schedule: NoiseSchedule, weights):
    schedule.check_timestep(t)
    z = np.asarray(z_t, dtype=np.float64)
    batch = split_batch(z, gm.shape)
    if batch is None:
        raise ShapeError(f"Mixture expects grids of shape {gm.shape}, got {z.shape}")
    ab = schedule.alpha_bar[t]
    flat = z.reshape((-1, gm.dim))
    s2 = ab * gm.variances + (1.0 - ab)
    diff = flat[:, None, :] - np.sqrt(ab) * gm.means.reshape(gm.n_components, gm.dim)[None]
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    log_terms = (
        np.log(weights)[None, :] - 0.5 * gm.dim * np.log(2.0 * np.pi * s2)[None, :] - 0.5 * sq / s2
    )
    return z, batch, ab, s2, diff, log_terms


def diffused_log_density(
    gm: GaussianMixture, z_t, t: int, schedule: NoiseSchedule, weights=None
) -> np.ndarray:
    weights = gm.weights if weights is None else weights
    _, batch, _, _, _, log_terms = _diffused_terms(gm, z_t, t, schedule, weights)
    return logsumexp(log_terms, axis=1).reshape(batch)


def gm_predict_eps(
    gm: GaussianMixture, z_t, t: int, schedule: NoiseSchedule, weights=None
) -> Grid:
    weights = gm.weights if weights is None else weights
    z, _, ab, s2, diff, log_terms = _diffused_terms(gm, z_t, t, schedule, weights)
    responsibilities = softmax(log_terms, axis=1)
    score = -np.einsum("nk,nkd->nd", responsibilities / s2[None, :], diff)
    return (-np.sqrt(1.0 - ab) * score).reshape(z.shape)


class GaussianMixtureDenoiser(BaseDenoiser):
    """
    Oracle denoiser. `conditional_weights` maps condition keys (`class:<k>`,
    `style:<s>`) to re-weightings of the same components.
    """

    def __init__(
        self,
        mixture: GaussianMixture,
        schedule: NoiseSchedule,
        conditional_weights: Optional[Mapping[str, Sequence[float]]] = None,
        name: str = "mixture",
    ):
        self.mixture = mixture
        self.schedule = schedule
        self.name = name
        self.shape = mixture.shape
        self.conditional_weights: Dict[str, np.ndarray] = {
            Condition.parse(key).key: _check_weights(
                w, mixture.n_components, f"conditional weights for `{key}`"
            )
            for key, w in (conditional_weights or {}).items()
        }

    def weights_for(self, cond: Condition) -> np.ndarray:
        if cond == UNCONDITIONAL:
            return self.mixture.weights
        try:
            return self.conditional_weights[cond.key]
        except KeyError as e:
            raise ParameterError(
                f"`{cond.key}` is not a condition of `{self.name}`. "
                f"Choices are {', '.join(self.conditional_weights) or '(none)'}"
            ) from e

    def _predict_eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return gm_predict_eps(self.mixture, z, t, self.schedule, self.weights_for(cond))
