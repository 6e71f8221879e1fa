"""
Reverse-diffusion loops: single-model sampling and the two-stage
structure/texture pipeline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ParameterError
from ..models.base import BaseDenoiser, Condition, StageDenoiser, resolve_shape
from ..numerics import Grid, NoiseSchedule, RngStream, gaussian_noise
from ..query_capture.utils import restrict_timesteps
from .guidance import GuidanceSpec, guided_prediction
from .samplers import SamplerConfig, sampler_step

logger = logging.getLogger(__name__)

DEFAULT_T_STRUCT = 500


@dataclass
class Trajectory:
    """
    `steps` holds `(t, z_t)` in the order visited; `x0` is the final clean prediction.
    """

    steps: List[Tuple[int, Grid]] = field(default_factory=list)
    x0: Optional[Grid] = None

    @property
    def timesteps(self) -> List[int]:
        return [t for t, _ in self.steps]

    def record(self, t: int, z: Grid, keep: bool) -> None:
        if self.steps and t >= self.steps[-1][0]:
            raise ParameterError(
                f"Trajectory timesteps must decrease, got {t} after {self.steps[-1][0]}"
            )
        self.steps.append((t, z if keep else np.empty((0,))))


def initial_noise(
    model: BaseDenoiser,
    rng: RngStream,
    shape: Optional[Sequence[int]] = None,
    n_chains: Optional[int] = None,
) -> Grid:
    shape = resolve_shape(model, shape)
    return gaussian_noise(((n_chains,) if n_chains else ()) + shape, rng)


def run_reverse(
    z: Grid,
    timesteps: Sequence[int],
    predict: Callable[[Grid, int], Grid],
    schedule: NoiseSchedule,
    config: SamplerConfig,
    rng: RngStream,
    trajectory: Optional[Trajectory] = None,
    record_trajectory: bool = True,
    final_t: int = 0,
) -> Grid:
    """
    Steps `z` down `timesteps` and then to `final_t`; `predict(z, t)` gives the epsilon.
    Returns the state at `final_t` (the x0 prediction when `final_t == 0`).
    """
    timesteps = [int(t) for t in timesteps]
    for i, t in enumerate(timesteps):
        if trajectory is not None:
            trajectory.record(t, z, record_trajectory)
        t_next = timesteps[i + 1] if i + 1 < len(timesteps) else final_t
        z = sampler_step(z, t, t_next, predict(z, t), schedule, config, rng)
    return z


def sample_loop(
    model: BaseDenoiser,
    cond: Condition,
    g: GuidanceSpec,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    rng: RngStream,
    shape: Optional[Sequence[int]] = None,
    n_chains: Optional[int] = None,
    z_T: Optional[Grid] = None,
    record_trajectory: bool = True,
) -> Trajectory:
    if z_T is None:
        z = initial_noise(model, rng, shape, n_chains)
    else:
        z = np.asarray(z_T, dtype=np.float64)
    trajectory = Trajectory()
    trajectory.x0 = run_reverse(
        z,
        config.timesteps(schedule.T),
        lambda z_t, t: guided_prediction(model, z_t, t, cond, g),
        schedule,
        config,
        rng,
        trajectory,
        record_trajectory,
    )
    logger.debug(
        "Sampled %(model)s over %(n)s steps", {"model": model.name, "n": len(trajectory.steps)}
    )
    return trajectory


def time_decoupled_sample(
    struct_model: BaseDenoiser,
    texture_model: BaseDenoiser,
    T_struct: int,
    cond: Condition,
    g: GuidanceSpec,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    rng: RngStream,
    shape: Optional[Sequence[int]] = None,
    n_chains: Optional[int] = None,
    z_T: Optional[Grid] = None,
    record_trajectory: bool = True,
    texture_g: Optional[GuidanceSpec] = None,
) -> Trajectory:
    """
    The structure model owns steps `t > T_struct`, the texture model `t <= T_struct`.
    The state at `T_struct` is handed over unmodified.
    """
    if not 0 <= T_struct < schedule.T:
        raise ParameterError(f"`T_struct` must be in [0, {schedule.T}), got {T_struct}")
    timesteps = config.timesteps(schedule.T)
    if T_struct > 0 and T_struct not in timesteps:
        raise ParameterError(
            f"`T_struct`={T_struct} is not on the sampler's timestep subsequence; "
            f"add it to the sampler `boundaries`"
        )
    structure = StageDenoiser(struct_model, "structure")
    texture = StageDenoiser(texture_model, "texture")
    texture_g = g if texture_g is None else texture_g
    if structure.shape is None and texture.shape is not None:
        structure.shape = texture.shape

    def predict(z_t, t):
        if t > T_struct:
            return guided_prediction(structure, z_t, t, cond, g)
        return guided_prediction(texture, z_t, t, cond, texture_g)

    if z_T is None:
        z = initial_noise(structure, rng, shape, n_chains)
    else:
        z = np.asarray(z_T, dtype=np.float64)
    trajectory = Trajectory()
    allowed = {"structure": (T_struct + 1, schedule.T), "texture": (1, T_struct)}
    with restrict_timesteps(allowed, run_name="time_decoupled_sample"):
        trajectory.x0 = run_reverse(
            z, timesteps, predict, schedule, config, rng, trajectory, record_trajectory
        )
    logger.debug(
        "Decoupled run handed over at T_struct=%(T_struct)s after %(n)s structure steps",
        {"T_struct": T_struct, "n": int(np.sum(timesteps > T_struct))},
    )
    return trajectory
