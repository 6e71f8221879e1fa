from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from typing_extensions import Literal

from ..exceptions import ParameterError
from ..numerics import Grid, NoiseSchedule, RngStream
from .algebra import predict_x0

logger = logging.getLogger(__name__)

DEFAULT_NUM_STEPS = 50


def make_timesteps(T: int, num_steps: int, include: Iterable[int] = ()) -> np.ndarray:
    """
    Strictly decreasing timesteps in [1, T], evenly spaced, always containing `T`
    and every value of `include` in [1, T]. `num_steps == T` gives every step.
    """
    if not 1 <= num_steps <= T:
        raise ParameterError(f"`num_steps` must be in [1, {T}], got {num_steps}")
    base = np.rint(np.linspace(T, 1, num_steps)).astype(np.int64) if num_steps > 1 else [T]
    extra = [int(b) for b in include if 1 <= int(b) <= T]
    return np.array(sorted(set(int(b) for b in base) | set(extra) | {T}, reverse=True))


@dataclass(frozen=True)
class SamplerConfig:
    method: Literal["ddim", "ancestral"] = "ddim"
    eta: float = 0.0
    num_steps: int = DEFAULT_NUM_STEPS
    boundaries: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.method not in ("ddim", "ancestral"):
            raise ParameterError(f"Unknown sampler `{self.method}`. Choices are ddim, ancestral")
        if self.eta < 0:
            raise ParameterError(f"`eta` must be >= 0, got {self.eta}")
        if self.num_steps < 1:
            raise ParameterError(f"`num_steps` must be positive, got {self.num_steps}")
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))

    def with_boundaries(self, *boundaries: int) -> "SamplerConfig":
        return SamplerConfig(
            self.method, self.eta, self.num_steps, tuple(self.boundaries) + boundaries
        )

    def timesteps(self, T: int) -> np.ndarray:
        return make_timesteps(T, min(self.num_steps, T), self.boundaries)

    @property
    def effective_eta(self) -> float:
        # ancestral sampling is the eta = 1 member of the family
        return 1.0 if self.method == "ancestral" else self.eta


def ddim_update(x0, eps, ab_next: float) -> Grid:
    return np.sqrt(ab_next) * np.asarray(x0) + np.sqrt(1.0 - ab_next) * np.asarray(eps)


def sampler_step(
    z_t,
    t: int,
    t_next: int,
    eps,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    rng: Optional[RngStream] = None,
) -> Grid:
    """
    One reverse step from `t` to `t_next`. `t_next == 0` returns the x0 prediction.
    Draws noise from `rng` only when the step is stochastic.
    """
    if not t > t_next >= 0:
        raise ParameterError(f"Need t > t_next >= 0, got t={t}, t_next={t_next}")
    schedule.check_timestep(t)
    x0 = predict_x0(z_t, t, eps, schedule)
    if t_next == 0:
        return x0
    ab_t, ab_next = schedule.alpha_bar[t], schedule.alpha_bar[t_next]
    eta = config.effective_eta
    if eta == 0.0:
        return ddim_update(x0, eps, ab_next)
    sigma = eta * np.sqrt((1.0 - ab_next) / (1.0 - ab_t) * (1.0 - ab_t / ab_next))
    if rng is None:
        raise ParameterError("A stochastic sampler step needs an `rng`")
    noise = rng.normal(np.shape(z_t))
    direction = np.sqrt(max(1.0 - ab_next - sigma**2, 0.0))
    return np.sqrt(ab_next) * x0 + direction * np.asarray(eps) + sigma * noise
