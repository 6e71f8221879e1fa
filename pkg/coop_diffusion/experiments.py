"""
Toy tasks and the training-design experiments built on them: the `T_struct` sweep and
the strategy comparison (one monolithic model against a structure/texture pair at the
same parameter-step budget, plus the structure-data and texture-resolution arms).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from typing_extensions import Literal

from .codecs import downsample
from .evaluation import frechet_between
from .exceptions import ParameterError
from .models.base import UNCONDITIONAL, BaseDenoiser
from .models.mixture import GaussianMixture
from .models.mlp import MlpArchitecture, MlpDenoiser
from .models.training import MixtureData, PoolData, TrainResult, TrainSpec, train_denoiser
from .numerics import NoiseSchedule, RngStream, Shape
from .sampling.guidance import NO_GUIDANCE
from .sampling.pipelines import DEFAULT_T_STRUCT, sample_loop, time_decoupled_sample
from .sampling.samplers import SamplerConfig
from .utils import unique_keep_order

logger = logging.getLogger(__name__)

TaskName = Literal["mixture2d", "image"]


def _smooth_pattern(size: int) -> np.ndarray:
    coords = np.linspace(-1.0, 1.0, size)
    return np.outer(np.cos(np.pi * coords / 2), np.sin(np.pi * coords / 2))


@dataclass(frozen=True)
class ToyTask:
    """
    A ground-truth mixture plus the low-resolution view used by the data regimes.
    """

    name: str
    mixture: GaussianMixture
    factor: int = 2
    texture_layout: Literal["vector", "patch"] = "vector"

    @property
    def shape(self) -> Shape:
        return self.mixture.shape

    @property
    def is_image(self) -> bool:
        return len(self.shape) == 2

    @property
    def low_res_shape(self) -> Shape:
        if not self.is_image:
            raise ParameterError(f"Task `{self.name}` has no low-resolution view")
        return tuple(s // self.factor for s in self.shape)

    def ground_truth(self, n: int, rng: RngStream) -> np.ndarray:
        return self.mixture.sample(n, rng)[0]

    def high_res_pool(self, n: int, rng: RngStream) -> PoolData:
        return PoolData.from_mixture(self.mixture, n, rng)

    def low_res_pool(self, n: int, rng: RngStream) -> PoolData:
        return PoolData(downsample(self.ground_truth(n, rng), self.factor))


def mixture2d_task(separation: float = 2.0, std: float = 0.5) -> ToyTask:
    means = np.array([[-separation, 0.0], [separation, 0.0]])
    return ToyTask("mixture2d", GaussianMixture(np.array([0.5, 0.5]), means, np.full(2, std**2)))


def image_task(size: int = 8, amplitude: float = 2.0, std: float = 0.5) -> ToyTask:
    pattern = _smooth_pattern(size)
    means = np.stack([amplitude * pattern, -amplitude * pattern])
    mixture = GaussianMixture(np.array([0.5, 0.5]), means, np.full(2, std**2))
    return ToyTask("image", mixture, factor=2, texture_layout="patch")


TASKS = {"mixture2d": mixture2d_task, "image": image_task}


def make_task(name: str, **kwargs) -> ToyTask:
    try:
        return TASKS[name](**kwargs)
    except KeyError as e:
        raise ParameterError(f"Unknown task `{name}`. Choices are {', '.join(TASKS)}") from e


@dataclass(frozen=True)
class Budget:
    """
    Per-arm training budget. Monolithic arms train a width `2 * width` model for
    `steps` optimizer steps; decoupled arms train two width `width` models for
    `steps // 2` each.
    """

    width: int = 32
    depth: int = 2
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 0.05
    n_samples: int = 2000
    pool_size: int = 256
    time_embed_dim: int = 16
    patch_size: int = 3


def build_architecture(
    task: ToyTask,
    width: int,
    budget: Budget,
    schedule: NoiseSchedule,
    layout: Optional[str] = None,
) -> MlpArchitecture:
    layout = layout or "vector"
    if layout == "patch":
        return MlpArchitecture(
            layout="patch",
            hidden=(width,) * budget.depth,
            patch_size=budget.patch_size,
            time_embed_dim=budget.time_embed_dim,
            resolutions=(task.low_res_shape, task.shape),
            resolution_embed_dim=4,
            T=schedule.T,
        )
    return MlpArchitecture(
        layout="vector",
        grid_shape=task.shape,
        hidden=(width,) * budget.depth,
        time_embed_dim=budget.time_embed_dim,
        T=schedule.T,
    )


def train_role(
    task: ToyTask,
    role: Literal["monolithic", "structure", "texture"],
    width: int,
    steps: int,
    budget: Budget,
    schedule: NoiseSchedule,
    T_struct: int,
    seed: int,
    structure_data: Literal["all", "high_res_only", "mixture"] = "mixture",
    texture_resolution: Literal["high", "low"] = "high",
) -> TrainResult:
    """
    Trains one generator for `role`. Structure owns `[T_struct + 1, T]`, texture
    `[1, T_struct]`, monolithic the whole range.
    """
    rng = RngStream(seed)
    init_rng, data_rng, train_rng = rng.split(3)
    t_range = {
        "monolithic": (1, schedule.T),
        "structure": (T_struct + 1, schedule.T),
        "texture": (1, T_struct),
    }[role]
    layout = task.texture_layout if role == "texture" else "vector"
    model = MlpDenoiser.initialize(
        build_architecture(task, width, budget, schedule, layout), init_rng, name=role
    )

    low_res_data = None
    policy = "native"
    data = MixtureData(task.mixture)
    if role == "structure" and structure_data != "mixture":
        data = task.high_res_pool(budget.pool_size, data_rng)
        if structure_data == "all":
            policy = "upscale_low_res_into_pool"
            low_res_data = task.low_res_pool(budget.pool_size, data_rng)
    if role == "texture" and texture_resolution == "low":
        policy = "train_at_low_res"

    spec = TrainSpec(
        t_range=t_range,
        resolution_policy=policy,
        steps=max(1, steps),
        learning_rate=budget.learning_rate,
        batch_size=budget.batch_size,
        seed=seed,
        low_res_factor=task.factor,
    )
    return train_denoiser(model, data, spec, schedule, train_rng, low_res_data=low_res_data)


def sampler_for(T_struct: int, num_steps: int = 50) -> SamplerConfig:
    return SamplerConfig(num_steps=num_steps, boundaries=(T_struct,) if T_struct > 0 else ())


def decoupled_frechet(
    task: ToyTask,
    structure: BaseDenoiser,
    texture: BaseDenoiser,
    T_struct: int,
    schedule: NoiseSchedule,
    n_samples: int,
    seed: int,
) -> float:
    sample_rng, truth_rng = RngStream(seed).split(2)
    trajectory = time_decoupled_sample(
        structure,
        texture,
        T_struct,
        UNCONDITIONAL,
        NO_GUIDANCE,
        sampler_for(T_struct),
        schedule,
        sample_rng,
        shape=task.shape,
        n_chains=n_samples,
        record_trajectory=False,
    )
    return frechet_between(trajectory.x0, task.ground_truth(n_samples, truth_rng))


def monolithic_frechet(
    task: ToyTask, model: BaseDenoiser, schedule: NoiseSchedule, n_samples: int, seed: int
) -> float:
    sample_rng, truth_rng = RngStream(seed).split(2)
    trajectory = sample_loop(
        model,
        UNCONDITIONAL,
        NO_GUIDANCE,
        SamplerConfig(),
        schedule,
        sample_rng,
        shape=task.shape,
        n_chains=n_samples,
        record_trajectory=False,
    )
    return frechet_between(trajectory.x0, task.ground_truth(n_samples, truth_rng))


@dataclass(frozen=True)
class AblationRow:
    T_struct: int
    frechet: float
    n_seeds: int
    per_seed: Tuple[float, ...] = field(default=(), repr=False)


def run_tstruct_ablation(
    task: ToyTask,
    values: Sequence[int],
    schedule: NoiseSchedule,
    budget: Budget = Budget(),
    seeds: Sequence[int] = (0,),
) -> List[AblationRow]:
    """
    One decoupled pair per distinct `T_struct` value, each model trained for
    `budget.steps // 2`.
    """
    rows = []
    for value in unique_keep_order(int(v) for v in values):
        if not 0 < value < schedule.T:
            raise ParameterError(f"`T_struct` values must be in (0, {schedule.T}), got {value}")
        scores = []
        for seed in seeds:
            structure = train_role(
                task, "structure", budget.width, budget.steps // 2, budget, schedule, value, seed
            ).model
            texture = train_role(
                task, "texture", budget.width, budget.steps // 2, budget, schedule, value, seed + 1
            ).model
            scores.append(
                decoupled_frechet(task, structure, texture, value, schedule, budget.n_samples, seed)
            )
        rows.append(AblationRow(int(value), float(np.mean(scores)), len(seeds), tuple(scores)))
        logger.debug(
            "T_struct=%(value)s frechet=%(frechet).5f",
            {"value": value, "frechet": rows[-1].frechet},
        )
    return rows


@dataclass(frozen=True)
class StrategyRow:
    arm: str
    seed: int
    parameters: int
    optimizer_steps: int
    param_steps: int
    frechet: float


def _pair_row(
    arm: str, seed: int, structure: TrainResult, texture: TrainResult, frechet: float
) -> StrategyRow:
    return StrategyRow(
        arm=arm,
        seed=seed,
        parameters=structure.model.architecture.parameter_count
        + texture.model.architecture.parameter_count,
        optimizer_steps=len(structure.loss_curve) + len(texture.loss_curve),
        param_steps=structure.param_steps + texture.param_steps,
        frechet=frechet,
    )


def run_strategy_comparison(
    task: ToyTask,
    schedule: NoiseSchedule,
    budget: Budget = Budget(),
    seeds: Sequence[int] = (0,),
    T_struct: int = DEFAULT_T_STRUCT,
    data_arms: bool = True,
) -> List[StrategyRow]:
    """
    Arms:
    - `monolithic`: one width `2w` model over every timestep.
    - `decoupled`: structure + texture of width `w`, half the steps each.
    - `structure_high_res_only` / `structure_all_data` (image tasks): the structure
      model trained on a finite high-res pool, with or without upscaled low-res items.
    - `texture_low_res` (patch texture tasks): texture trained on downsampled data and
      sampled at full resolution.
    """
    rows: List[StrategyRow] = []
    half = budget.steps // 2
    n = budget.n_samples
    data_arm_choices = (("structure_high_res_only", "high_res_only"), ("structure_all_data", "all"))
    for seed in seeds:
        mono = train_role(
            task, "monolithic", 2 * budget.width, budget.steps, budget, schedule, T_struct, seed
        )
        rows.append(
            StrategyRow(
                arm="monolithic",
                seed=seed,
                parameters=mono.model.architecture.parameter_count,
                optimizer_steps=len(mono.loss_curve),
                param_steps=mono.param_steps,
                frechet=monolithic_frechet(task, mono.model, schedule, n, seed),
            )
        )

        structure = train_role(
            task, "structure", budget.width, half, budget, schedule, T_struct, seed
        )
        texture = train_role(
            task, "texture", budget.width, half, budget, schedule, T_struct, seed + 1
        )
        score = decoupled_frechet(task, structure.model, texture.model, T_struct, schedule, n, seed)
        rows.append(_pair_row("decoupled", seed, structure, texture, score))

        if data_arms and task.is_image:
            for arm, data in data_arm_choices:
                arm_structure = train_role(
                    task,
                    "structure",
                    budget.width,
                    half,
                    budget,
                    schedule,
                    T_struct,
                    seed,
                    structure_data=data,
                )
                score = decoupled_frechet(
                    task, arm_structure.model, texture.model, T_struct, schedule, n, seed
                )
                rows.append(_pair_row(arm, seed, arm_structure, texture, score))
        if data_arms and task.texture_layout == "patch":
            low_texture = train_role(
                task,
                "texture",
                budget.width,
                half,
                budget,
                schedule,
                T_struct,
                seed + 1,
                texture_resolution="low",
            )
            score = decoupled_frechet(
                task, structure.model, low_texture.model, T_struct, schedule, n, seed
            )
            rows.append(_pair_row("texture_low_res", seed, structure, low_texture, score))
    return rows


def mean_by_arm(rows: Sequence[StrategyRow]) -> Dict[str, float]:
    arms: Dict[str, List[float]] = {}
    for row in rows:
        arms.setdefault(row.arm, []).append(row.frechet)
    return {arm: float(np.mean(values)) for arm, values in arms.items()}
