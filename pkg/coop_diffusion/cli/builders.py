"""
Turns a validated config into library objects.
"""
import logging
from typing import Dict, Optional

from ..codecs import LinearCodec, identity_codec, load_codec, orthogonal_codec, scale_codec
from ..coop import FusionMember, FusionPlan
from ..exceptions import ConfigurationError
from ..experiments import Budget
from ..models.base import BaseDenoiser, Condition
from ..models.mixture import GaussianMixture, GaussianMixtureDenoiser
from ..models.serialization import load_denoiser
from ..numerics import NoiseSchedule, build_schedule
from ..sampling.guidance import GuidanceSpec
from ..sampling.samplers import SamplerConfig

logger = logging.getLogger(__name__)


def schedule_from_config(config) -> NoiseSchedule:
    schedule = config["schedule"]
    return build_schedule(
        schedule["T"], schedule["beta_min"], schedule["beta_max"], schedule["kind"]
    )


def codec_from_config(name: str, spec) -> LinearCodec:
    kind = spec["kind"]
    if kind == "file":
        return load_codec(spec["path"])
    shape = tuple(spec["pixel_shape"])
    if kind == "identity":
        return identity_codec(shape, name=name)
    if kind == "scale":
        return scale_codec(shape, spec["scale"], name=name)
    return orthogonal_codec(
        shape, seed=spec["seed"], scale=spec["scale"], bias_scale=spec["bias_scale"], name=name
    )


def codecs_from_config(config) -> Dict[str, LinearCodec]:
    return {name: codec_from_config(name, spec) for name, spec in config["codecs"].items()}


def model_from_config(name: str, spec, schedule: NoiseSchedule) -> BaseDenoiser:
    if spec["kind"] == "file":
        return load_denoiser(spec["path"], schedule, name=name)
    return GaussianMixtureDenoiser(
        GaussianMixture.from_dict(spec["mixture"]),
        schedule,
        conditional_weights=spec.get("conditional_weights"),
        name=name,
    )


def models_from_config(config, schedule: NoiseSchedule) -> Dict[str, BaseDenoiser]:
    models = {
        name: model_from_config(name, spec, schedule) for name, spec in config["models"].items()
    }
    logger.debug("Built models %(names)s", {"names": ", ".join(models) or "(none)"})
    return models


def sampler_from_config(config, *boundaries: int) -> SamplerConfig:
    sampler = config["sampler"]
    return SamplerConfig(
        method=sampler["method"],
        eta=sampler["eta"],
        num_steps=sampler["num_steps"],
        boundaries=tuple(sampler["boundaries"]) + tuple(b for b in boundaries if b > 0),
    )


def guidance_from_config(guidance: Optional[dict]) -> GuidanceSpec:
    if not guidance:
        return GuidanceSpec()
    return GuidanceSpec(s=guidance["s"], s_style=guidance["s_style"], style=guidance.get("style"))


def member_from_config(spec, models, codecs) -> FusionMember:
    model, codec = models[spec["model"]], codecs[spec["codec"]]
    if model.shape is not None and model.shape != codec.latent_shape:
        raise ConfigurationError(
            f"Model `{model.name}` works on shape {model.shape} but codec `{codec.name}` "
            f"has latent shape {codec.latent_shape}"
        )
    return FusionMember(
        model=model,
        codec=codec,
        cond=Condition.parse(spec["condition"]),
        guidance=guidance_from_config(spec.get("guidance")),
    )


def fusion_plan_from_config(config, models, codecs, upsample_mode: str = "coop") -> FusionPlan:
    fusion = config["fusion"]
    T_low = fusion.get("T_low")
    return FusionPlan(
        mode=fusion["mode"],
        a=member_from_config(fusion["a"], models, codecs),
        b=member_from_config(fusion["b"], models, codecs),
        sampler=sampler_from_config(config, *([T_low] if T_low else [])),
        d=fusion["d"],
        T_low=T_low,
        upsample_mode=upsample_mode,
        noise_init=fusion["noise_init"],
    )


def budget_from_config(spec) -> Budget:
    return Budget(
        width=spec["width"],
        depth=spec["depth"],
        steps=spec["steps"],
        batch_size=spec["batch_size"],
        learning_rate=spec["learning_rate"],
        n_samples=spec["n_samples"],
        pool_size=spec["pool_size"],
    )
