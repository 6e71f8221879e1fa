"""
Running two pre-trained denoisers in one reverse process.

- Latent fusion: both models denoise in their own latent spaces; model B's prediction
  is re-expressed in A's space (predict x0, decode, re-encode, invert) and mixed into
  A's prediction with strength `d`. The fused prediction is bridged back to step B.
- Resolution fusion: a low-resolution model denoises down to `T_low`, its clean
  prediction is upsampled in pixel space, re-encoded and re-noised with fresh noise,
  and a high-resolution model finishes the run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from typing_extensions import Literal

from .codecs import (
    LinearCodec,
    ResolutionOp,
    decode,
    encode,
    interpolation_energy,
    naive_upsample_latent,
)
from .evaluation import marginal_variance, mean_lag1_autocorr
from .exceptions import ConfigurationError, NumericalDomainError, ParameterError, ShapeError
from .models.base import UNCONDITIONAL, BaseDenoiser, Condition
from .numerics import Grid, NoiseSchedule, RngStream, gaussian_noise
from .sampling.algebra import invert_to_eps, predict_x0, q_sample
from .sampling.guidance import NO_GUIDANCE, GuidanceSpec, guided_prediction
from .sampling.pipelines import Trajectory, run_reverse
from .sampling.samplers import SamplerConfig, sampler_step

logger = logging.getLogger(__name__)

FusionMode = Literal["latent_fusion", "resolution_fusion"]
UpsampleMode = Literal["coop", "naive"]
NoiseInit = Literal["aligned", "shared"]


@dataclass(frozen=True)
class FusionMember:
    model: BaseDenoiser
    codec: LinearCodec
    cond: Condition = UNCONDITIONAL
    guidance: GuidanceSpec = NO_GUIDANCE

    def predict(self, z_t, t: int) -> Grid:
        return guided_prediction(self.model, z_t, t, self.cond, self.guidance)


@dataclass(frozen=True)
class FusionPlan:
    """
    `a` is the model whose output is kept (the high-resolution model in resolution
    mode); `b` is the partner (the low-resolution model).
    """

    mode: FusionMode
    a: FusionMember
    b: FusionMember
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    d: float = 0.5
    T_low: Optional[int] = None
    upsample_mode: UpsampleMode = "coop"
    noise_init: NoiseInit = "aligned"

    def __post_init__(self):
        if self.mode not in ("latent_fusion", "resolution_fusion"):
            raise ParameterError(f"Unknown fusion mode `{self.mode}`")
        if not 0.0 <= self.d <= 1.0:
            raise ParameterError(f"`d` must be in [0, 1], got {self.d}")
        if self.upsample_mode not in ("coop", "naive"):
            raise ParameterError(f"Unknown `upsample_mode` `{self.upsample_mode}`")
        if self.noise_init not in ("aligned", "shared"):
            raise ParameterError(f"Unknown `noise_init` `{self.noise_init}`")
        if self.mode == "latent_fusion":
            if self.a.codec.latent_shape != self.b.codec.latent_shape:
                raise ConfigurationError(
                    f"Latent fusion needs equal latent shapes, got "
                    f"{self.a.codec.latent_shape} and {self.b.codec.latent_shape}"
                )
        else:
            if self.T_low is None or self.T_low < 1:
                raise ParameterError(f"`T_low` must be a timestep >= 1, got {self.T_low}")
            _ = self.up

    @property
    def up(self) -> ResolutionOp:
        high, low = self.a.codec.pixel_shape, self.b.codec.pixel_shape
        if len(high) != 2 or len(low) != 2 or high[0] % low[0] or high[1] % low[1]:
            raise ConfigurationError(
                f"High-res pixel shape {high} is not an integer multiple of low-res {low}"
            )
        factor = high[0] // low[0]
        if factor < 2 or high[1] // low[1] != factor:
            raise ConfigurationError(
                f"Resolution fusion needs one integer factor >= 2 between {low} and {high}"
            )
        return ResolutionOp(factor)


@dataclass
class CoopResult:
    """
    `x0` is the kept model's decoded pixel output. In resolution mode trajectory `a`
    covers `t <= T_low` and trajectory `b` the low-resolution steps above it; `handoff`
    is the low-resolution latent at `T_low`.
    """

    x0: Grid
    trajectory_a: Trajectory
    trajectory_b: Trajectory
    x0_b: Optional[Grid] = None
    handoff: Optional[Grid] = None


def bridge_eps(
    eps_src,
    z_src,
    z_dst,
    codec_src: LinearCodec,
    codec_dst: LinearCodec,
    t: int,
    schedule: NoiseSchedule,
) -> Grid:
    """
    Re-expresses `eps_src`, predicted at `(z_src, t)` in the source latent space, as
    the epsilon at `(z_dst, t)` in the destination space.
    """
    if np.any(np.asarray(t) == 0):
        raise NumericalDomainError("Cannot bridge predictions at t=0")
    x0_src = predict_x0(z_src, t, eps_src, schedule)
    x0_dst = encode(codec_dst, decode(codec_src, x0_src))
    return invert_to_eps(z_dst, t, x0_dst, schedule)


def fuse_eps(eps_bridged, eps_native, d: float) -> Grid:
    if not 0.0 <= d <= 1.0:
        raise ParameterError(f"`d` must be in [0, 1], got {d}")
    eps_bridged = np.asarray(eps_bridged, dtype=np.float64)
    eps_native = np.asarray(eps_native, dtype=np.float64)
    if eps_bridged.shape != eps_native.shape:
        raise ShapeError(f"Cannot fuse shapes {eps_bridged.shape} and {eps_native.shape}")
    if d == 0.0:
        return eps_native.copy()
    if d == 1.0:
        return eps_bridged.copy()
    return d * eps_bridged + (1.0 - d) * eps_native


def _batch_prefix(n_chains: Optional[int]) -> Tuple[int, ...]:
    return (n_chains,) if n_chains else ()


def _initial_partner_noise(plan: FusionPlan, z_T: np.ndarray) -> np.ndarray:
    if plan.noise_init == "shared":
        return z_T.copy()
    mapping = plan.a.codec.noise_alignment(plan.b.codec)
    flat = z_T.reshape((-1, plan.a.codec.latent_dim)) @ mapping.T
    batch = z_T.shape[: z_T.ndim - len(plan.a.codec.latent_shape)]
    return flat.reshape(batch + plan.b.codec.latent_shape)


def coop_latent_sample(
    plan: FusionPlan,
    schedule: NoiseSchedule,
    rng: RngStream,
    n_chains: Optional[int] = None,
    record_trajectory: bool = True,
) -> CoopResult:
    """
    Lock-step fused run of chains A and B. Chain B's stochastic noise comes from a
    child stream, so the draws of chain A match single-model sampling of A.
    """
    if plan.mode != "latent_fusion":
        raise ConfigurationError(
            f"`coop_latent_sample` needs a latent-fusion plan, got `{plan.mode}`"
        )
    a, b = plan.a, plan.b
    (rng_b,) = rng.split(1)
    z_a = gaussian_noise(_batch_prefix(n_chains) + a.codec.latent_shape, rng)
    z_b = _initial_partner_noise(plan, z_a)

    timesteps = [int(t) for t in plan.sampler.timesteps(schedule.T)]
    trajectory_a, trajectory_b = Trajectory(), Trajectory()
    for i, t in enumerate(timesteps):
        trajectory_a.record(t, z_a, record_trajectory)
        trajectory_b.record(t, z_b, record_trajectory)
        t_next = timesteps[i + 1] if i + 1 < len(timesteps) else 0

        eps_a = a.predict(z_a, t)
        if plan.d > 0.0:
            eps_b = b.predict(z_b, t)
            bridged = bridge_eps(eps_b, z_b, z_a, b.codec, a.codec, t, schedule)
            eps_fuse = fuse_eps(bridged, eps_a, plan.d)
        else:
            eps_fuse = eps_a
        eps_b_step = bridge_eps(eps_fuse, z_a, z_b, a.codec, b.codec, t, schedule)

        z_a = sampler_step(z_a, t, t_next, eps_fuse, schedule, plan.sampler, rng)
        z_b = sampler_step(z_b, t, t_next, eps_b_step, schedule, plan.sampler, rng_b)

    trajectory_a.x0, trajectory_b.x0 = z_a, z_b
    logger.debug(
        "Latent fusion d=%(d)s over %(n)s steps", {"d": plan.d, "n": len(timesteps)}
    )
    return CoopResult(decode(a.codec, z_a), trajectory_a, trajectory_b, decode(b.codec, z_b))


def _resolution_bridge(
    z_src, t: int, eps_src, codec_src: LinearCodec, codec_dst: LinearCodec, resample, schedule, rng
) -> Tuple[Grid, Grid, Grid]:
    x0_src = predict_x0(z_src, t, eps_src, schedule)
    x_dst = resample(decode(codec_src, x0_src))
    z0_dst = encode(codec_dst, x_dst)
    noise = gaussian_noise(np.shape(z0_dst), rng)
    return q_sample(z0_dst, t, noise, schedule), z0_dst, noise


def bridge_resolution(
    z_low,
    t: int,
    eps_low,
    codec_low: LinearCodec,
    codec_high: LinearCodec,
    up: ResolutionOp,
    schedule: NoiseSchedule,
    rng: RngStream,
    return_parts: bool = False,
):
    """
    Upsamples the predicted clean image (not the noisy latent) and re-noises it at `t`
    with a fresh draw from `rng`. With `return_parts`, returns
    `(z_high, z0_high, fresh_noise)`.
    """
    schedule.check_timestep(t)
    if up.mode != "bilinear_up":
        raise ParameterError("`bridge_resolution` needs an upsampling `ResolutionOp`")
    if up.output_shape(codec_low.pixel_shape) != codec_high.pixel_shape:
        raise ShapeError(
            f"Upsampling {codec_low.pixel_shape} by {up.factor} does not give "
            f"{codec_high.pixel_shape}"
        )
    parts = _resolution_bridge(z_low, t, eps_low, codec_low, codec_high, up, schedule, rng)
    return parts if return_parts else parts[0]


def downsample_bridge(
    z_high,
    t: int,
    eps_high,
    codec_high: LinearCodec,
    codec_low: LinearCodec,
    factor: int,
    schedule: NoiseSchedule,
    rng: RngStream,
    return_parts: bool = False,
):
    """
    The high-to-low direction: downsample the predicted clean image, re-encode, re-noise.
    """
    schedule.check_timestep(t)
    down = ResolutionOp(factor, "average_pool_down")
    if down.output_shape(codec_high.pixel_shape) != codec_low.pixel_shape:
        raise ShapeError(
            f"Downsampling {codec_high.pixel_shape} by {factor} does not give "
            f"{codec_low.pixel_shape}"
        )
    parts = _resolution_bridge(z_high, t, eps_high, codec_high, codec_low, down, schedule, rng)
    return parts if return_parts else parts[0]


def _naive_bridge(plan: FusionPlan, z_low: np.ndarray) -> np.ndarray:
    latent_low, latent_high = plan.b.codec.latent_shape, plan.a.codec.latent_shape
    if len(latent_low) != 2 or plan.up.output_shape(latent_low) != latent_high:
        raise ConfigurationError(
            f"Naive latent upsampling needs [H, W] latents scaling {latent_low} -> {latent_high}"
        )
    return naive_upsample_latent(z_low, plan.up.factor)


def coop_resolution_sample(
    plan: FusionPlan,
    schedule: NoiseSchedule,
    rng: RngStream,
    n_chains: Optional[int] = None,
    record_trajectory: bool = True,
) -> CoopResult:
    """
    Low-resolution steps for `t > T_low`, a bridge at `T_low`, high-resolution steps
    for `t <= T_low`. In `naive` mode the bridge upsamples the noisy latent directly.
    """
    if plan.mode != "resolution_fusion":
        raise ConfigurationError(
            f"`coop_resolution_sample` needs a resolution-fusion plan, got `{plan.mode}`"
        )
    T_low = int(plan.T_low)
    timesteps = [int(t) for t in plan.sampler.timesteps(schedule.T)]
    if T_low not in timesteps:
        raise ParameterError(
            f"`T_low`={T_low} is not on the sampler's timestep subsequence; "
            f"add it to the sampler `boundaries`"
        )
    high, low = plan.a, plan.b
    z_low = gaussian_noise(_batch_prefix(n_chains) + low.codec.latent_shape, rng)

    trajectory_low = Trajectory()
    z_low = run_reverse(
        z_low,
        [t for t in timesteps if t > T_low],
        low.predict,
        schedule,
        plan.sampler,
        rng,
        trajectory_low,
        record_trajectory,
        final_t=T_low,
    )
    # fresh query at T_low, the loop last queried the step above it
    eps_low = low.predict(z_low, T_low)
    trajectory_low.x0 = decode(low.codec, predict_x0(z_low, T_low, eps_low, schedule))

    if plan.upsample_mode == "coop":
        z_high = bridge_resolution(
            z_low, T_low, eps_low, low.codec, high.codec, plan.up, schedule, rng
        )
    else:
        z_high = _naive_bridge(plan, z_low)
    logger.debug(
        "Resolution bridge (%(mode)s) at T_low=%(T_low)s",
        {"mode": plan.upsample_mode, "T_low": T_low},
    )

    trajectory_high = Trajectory()
    z0_high = run_reverse(
        z_high,
        [t for t in timesteps if t <= T_low],
        high.predict,
        schedule,
        plan.sampler,
        rng,
        trajectory_high,
        record_trajectory,
    )
    trajectory_high.x0 = z0_high
    return CoopResult(
        decode(high.codec, z0_high),
        trajectory_high,
        trajectory_low,
        trajectory_low.x0,
        handoff=z_low,
    )


@dataclass(frozen=True)
class WhitenessReport:
    coop_rho: float
    naive_rho: float
    coop_variance: float
    naive_variance: float
    naive_interpolated_variance: float


def whiteness_report(
    z_low,
    t: int,
    eps_low,
    codec_low: LinearCodec,
    codec_high: LinearCodec,
    up: ResolutionOp,
    schedule: NoiseSchedule,
    rng: RngStream,
) -> WhitenessReport:
    """
    Lag-1 correlation and per-site variance of the high-resolution noise component
    after the coop bridge, against upsampling the low-resolution noise component
    directly. `z_low` carries a leading batch of draws.
    """
    z_high, z0_high, _ = bridge_resolution(
        z_low, t, eps_low, codec_low, codec_high, up, schedule, rng, return_parts=True
    )
    ab = schedule.alpha_bar[t]
    coop_noise = (z_high - np.sqrt(ab) * z0_high) / np.sqrt(1.0 - ab)
    x0_low = predict_x0(z_low, t, eps_low, schedule)
    low_noise = (np.asarray(z_low) - np.sqrt(ab) * x0_low) / np.sqrt(1.0 - ab)
    naive_noise = naive_upsample_latent(low_noise, up.factor)
    energy = interpolation_energy(np.shape(low_noise)[-2:], up.factor)
    interpolated = (energy >= 0.45) & (energy <= 0.55)
    return WhitenessReport(
        coop_rho=mean_lag1_autocorr(coop_noise),
        naive_rho=mean_lag1_autocorr(naive_noise),
        coop_variance=marginal_variance(coop_noise),
        naive_variance=marginal_variance(naive_noise),
        naive_interpolated_variance=(
            marginal_variance(naive_noise, interpolated) if np.any(interpolated) else float("nan")
        ),
    )
