"""
Epsilon-objective training with plain SGD, plus the data regimes used to train
structure and texture generators separately.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from typing_extensions import Literal, Protocol

from ..codecs import ResolutionOp, downsample
from ..exceptions import ParameterError, ShapeError, TrainingDivergedError
from ..numerics import NoiseSchedule, RngStream, Shape
from ..sampling.algebra import q_sample
from .base import UNCONDITIONAL, Condition
from .mixture import GaussianMixture
from .mlp import MlpDenoiser, mlp_gradients

logger = logging.getLogger(__name__)

ResolutionPolicy = Literal["native", "upscale_low_res_into_pool", "train_at_low_res"]
RESOLUTION_POLICIES = ("native", "upscale_low_res_into_pool", "train_at_low_res")


class DataSampler(Protocol):
    shape: Shape

    def sample(self, n: int, rng: RngStream) -> Tuple[np.ndarray, List[Condition]]:
        ...  # pragma: no cover


class MixtureData:
    """
    Draws `x0` from a mixture. With `conditional_weights`, every draw first picks a
    label uniformly among `unconditional` and the given keys, then samples the mixture
    re-weighted for that label.
    """

    def __init__(
        self,
        mixture: GaussianMixture,
        conditional_weights: Optional[Mapping[str, Sequence[float]]] = None,
    ):
        self.mixture = mixture
        self.shape = mixture.shape
        self.labels = [UNCONDITIONAL] + [Condition.parse(k) for k in (conditional_weights or {})]
        self.mixtures = [mixture] + [
            mixture.with_weights(w) for w in (conditional_weights or {}).values()
        ]

    def sample(self, n: int, rng: RngStream) -> Tuple[np.ndarray, List[Condition]]:
        if len(self.labels) == 1:
            x0, _ = self.mixture.sample(n, rng)
            return x0, [UNCONDITIONAL] * n
        picks = rng.integers(0, len(self.labels) - 1, size=n)
        x0 = np.empty((n,) + self.shape)
        for i, mixture in enumerate(self.mixtures):
            mask = picks == i
            if np.any(mask):
                x0[mask], _ = mixture.sample(int(mask.sum()), rng)
        return x0, [self.labels[i] for i in picks]


class PoolData:
    """
    Finite pool of items, sampled uniformly with replacement.
    """

    def __init__(self, items, conditions: Optional[Sequence[Condition]] = None):
        items = np.array(items, dtype=np.float64, copy=True)
        if items.ndim < 2:
            raise ShapeError("Pool items must have shape (n, *grid_shape)")
        if conditions is not None and len(conditions) != items.shape[0]:
            raise ShapeError(f"Got {len(conditions)} conditions for {items.shape[0]} items")
        self.items = items
        self.conditions = list(conditions) if conditions is not None else None
        self.shape: Shape = tuple(items.shape[1:])

    def __len__(self):
        return self.items.shape[0]

    @classmethod
    def from_mixture(cls, mixture: GaussianMixture, n: int, rng: RngStream) -> "PoolData":
        items, _ = mixture.sample(n, rng)
        return cls(items)

    def sample(self, n: int, rng: RngStream) -> Tuple[np.ndarray, List[Condition]]:
        if not len(self):
            raise ParameterError("Cannot sample from an empty pool")
        idx = rng.integers(0, len(self) - 1, size=n)
        conds = [self.conditions[i] for i in idx] if self.conditions else [UNCONDITIONAL] * n
        return self.items[idx], conds


def make_structure_pool(high_res: PoolData, low_res: PoolData, up: ResolutionOp) -> PoolData:
    """
    Union of the high-resolution items and the upscaled low-resolution ones.
    """
    if up.mode != "bilinear_up":
        raise ParameterError("`make_structure_pool` needs an upsampling `ResolutionOp`")
    if not len(low_res):
        return high_res
    if up.output_shape(low_res.shape) != high_res.shape[-2:] or len(high_res.shape) != 2:
        raise ShapeError(
            f"Low-res items {low_res.shape} upscaled by {up.factor} don't match "
            f"high-res items {high_res.shape}"
        )
    items = np.concatenate([high_res.items, up(low_res.items)])
    conditions = None
    if high_res.conditions or low_res.conditions:
        conditions = (high_res.conditions or [UNCONDITIONAL] * len(high_res)) + (
            low_res.conditions or [UNCONDITIONAL] * len(low_res)
        )
    logger.debug(
        "Structure pool: %(hi)s high-res + %(lo)s upscaled items",
        {"hi": len(high_res), "lo": len(low_res)},
    )
    return PoolData(items, conditions)


@dataclass(frozen=True)
class TrainSpec:
    t_range: Tuple[int, int]
    resolution_policy: ResolutionPolicy = "native"
    steps: int = 1000
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    low_res_factor: int = 2

    def __post_init__(self):
        lo, hi = (int(v) for v in self.t_range)
        object.__setattr__(self, "t_range", (lo, hi))
        if lo < 1 or lo > hi:
            raise ParameterError(
                f"`t_range` must be a nonempty interval within [1, T], got {self.t_range}"
            )
        if self.resolution_policy not in RESOLUTION_POLICIES:
            raise ParameterError(
                f"Unknown `resolution_policy` `{self.resolution_policy}`. "
                f"Choices are {', '.join(RESOLUTION_POLICIES)}"
            )
        if self.steps < 1 or self.batch_size < 1:
            raise ParameterError("`steps` and `batch_size` must be positive")
        if not self.learning_rate > 0:
            raise ParameterError(f"`learning_rate` must be positive, got {self.learning_rate}")

    def check_schedule(self, schedule: NoiseSchedule) -> None:
        if self.t_range[1] > schedule.T:
            raise ParameterError(f"`t_range` {self.t_range} exceeds T={schedule.T}")


@dataclass
class TrainResult:
    model: MlpDenoiser
    loss_curve: List[float]
    param_steps: int
    timesteps_seen: Tuple[int, int] = field(default=(0, 0))


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, values.shape[0]))
    return np.convolve(values, np.ones(window) / window, mode="valid")


def train_denoiser(
    m: MlpDenoiser,
    data: DataSampler,
    spec: TrainSpec,
    schedule: NoiseSchedule,
    rng: Optional[RngStream] = None,
    low_res_data: Optional[PoolData] = None,
) -> TrainResult:
    """
    SGD on `mean ||eps - eps_theta(q_sample(x0, t, eps), t, c)||^2` with
    `t ~ Uniform(spec.t_range)`.
    """
    spec.check_schedule(schedule)
    rng = rng if rng is not None else RngStream(spec.seed)
    if spec.resolution_policy == "upscale_low_res_into_pool":
        if low_res_data is None or not isinstance(data, PoolData):
            raise ParameterError(
                "`upscale_low_res_into_pool` needs a high-res pool and `low_res_data`"
            )
        data = make_structure_pool(data, low_res_data, ResolutionOp(spec.low_res_factor))

    lo, hi = spec.t_range
    parameters = [(np.array(w), np.array(b)) for w, b in m.parameters]
    model = m
    loss_curve: List[float] = []
    t_seen = [hi, lo]
    for step in range(spec.steps):
        x0, conds = data.sample(spec.batch_size, rng)
        if spec.resolution_policy == "train_at_low_res":
            x0 = downsample(x0, spec.low_res_factor)
        t = rng.integers(lo, hi, size=spec.batch_size)
        t_seen = [min(t_seen[0], int(t.min())), max(t_seen[1], int(t.max()))]
        eps = rng.normal(x0.shape)
        z_t = q_sample(x0, t, eps, schedule)

        loss, grads = mlp_gradients(model, (z_t, t, conds, eps))
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"Training `{m.name}` diverged at step {step} (loss={loss})", step=step
            )
        loss_curve.append(loss)
        parameters = [
            (w - spec.learning_rate * gw, b - spec.learning_rate * gb)
            for (w, b), (gw, gb) in zip(parameters, grads)
        ]
        try:
            model = model.with_parameters(parameters)
        except ParameterError as e:
            raise TrainingDivergedError(
                f"Training `{m.name}` diverged at step {step}", step=step
            ) from e
        if step % 100 == 0:
            logger.debug(
                "Training %(name)s step %(step)s loss %(loss).5f",
                {"name": m.name, "step": step, "loss": loss},
            )

    return TrainResult(
        model=model,
        loss_curve=loss_curve,
        param_steps=m.architecture.parameter_count * spec.steps,
        timesteps_seen=(t_seen[0], t_seen[1]),
    )
