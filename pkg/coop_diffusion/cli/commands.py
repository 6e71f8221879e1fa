"""
One function per CLI command. Each takes the validated config, the output
directory and the seed, writes its artifacts plus `manifest.json`, and returns
the exit code.
"""
import logging
from typing import List, Optional

import numpy as np

from ..codecs import decode
from ..coop import coop_latent_sample, coop_resolution_sample, whiteness_report
from ..evaluation import MetricRow, frechet_between, mixture_occupancy
from ..exceptions import ConfigurationError
from ..experiments import make_task, mean_by_arm, run_strategy_comparison, run_tstruct_ablation
from ..experiments import train_role
from ..models.base import BaseDenoiser, Condition
from ..models.mixture import GaussianMixtureDenoiser
from ..models.serialization import save_mlp
from ..models.training import smoothed
from ..numerics import RngStream
from ..sampling.pipelines import sample_loop, time_decoupled_sample
from . import builders
from .artifacts import COST_NOTE, FRECHET_NOTE, RunArtifacts, density_pgm, read_samples_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0


def _streams(seed: int):
    # chains draw from the first child, reference draws from the second
    return RngStream(seed).split(2)


def _oracle_rows(
    run_id: str, samples, model: BaseDenoiser, cond: Condition, truth_rng: RngStream, seed: int
) -> List[MetricRow]:
    if not isinstance(model, GaussianMixtureDenoiser):
        return []
    mixture = model.mixture.with_weights(model.weights_for(cond))
    n = samples.shape[0]
    rows = []
    if n > mixture.dim:
        truth, _ = mixture.sample(n, truth_rng)
        rows.append(MetricRow(run_id, "frechet", frechet_between(samples, truth), n, seed))
    for k, share in enumerate(mixture_occupancy(samples, mixture)):
        rows.append(MetricRow(run_id, f"occupancy_{k}", float(share), n, seed))
    return rows


def _write_density(artifacts: RunArtifacts, samples, name: str = "hist.pgm") -> None:
    flat = np.asarray(samples).reshape(samples.shape[0], -1)
    if flat.shape[1] == 2:
        artifacts.write_bytes(name, density_pgm(flat))


def cmd_sample(config, out_dir: str, seed: int) -> int:
    sample = config["sample"]
    schedule = builders.schedule_from_config(config)
    models = builders.models_from_config(config, schedule)
    codecs = builders.codecs_from_config(config)
    cond = Condition.parse(config["condition"])
    guidance = builders.guidance_from_config(config["guidance"])
    chain_rng, truth_rng = _streams(seed)
    shape = tuple(sample["shape"]) if "shape" in sample else None
    keep = sample["write_trajectory"]

    if "model" in sample:
        oracle = models[sample["model"]]
        trajectory = sample_loop(
            oracle,
            cond,
            guidance,
            builders.sampler_from_config(config),
            schedule,
            chain_rng,
            shape=shape,
            n_chains=config["n_chains"],
            record_trajectory=keep,
        )
        run_id = "sample"
    else:
        oracle = models[sample["struct_model"]]
        T_struct = sample["T_struct"]
        trajectory = time_decoupled_sample(
            oracle,
            models[sample["texture_model"]],
            T_struct,
            cond,
            guidance,
            builders.sampler_from_config(config, T_struct),
            schedule,
            chain_rng,
            shape=shape,
            n_chains=config["n_chains"],
            record_trajectory=keep,
        )
        run_id = f"decoupled_T{T_struct}"

    artifacts = RunArtifacts(out_dir, "sample", config, seed)
    latent_x0 = trajectory.x0
    x0 = decode(codecs[sample["codec"]], latent_x0) if "codec" in sample else latent_x0
    artifacts.write_samples("samples.csv", x0)
    if keep:
        artifacts.write_trajectory("trajectory.csv", trajectory)
    metrics = _oracle_rows(run_id, latent_x0, oracle, cond, truth_rng, seed)
    if metrics:
        artifacts.write_metrics(metrics)
        artifacts.notes.append(FRECHET_NOTE)
    _write_density(artifacts, x0)
    artifacts.write_manifest()
    return EXIT_OK


def _pixel_truth(member, n: int, rng: RngStream) -> Optional[np.ndarray]:
    model = member.model
    if not isinstance(model, GaussianMixtureDenoiser) or n <= member.codec.pixel_dim:
        return None
    latent, _ = model.mixture.with_weights(model.weights_for(member.cond)).sample(n, rng)
    return decode(member.codec, latent)


def _fuse_latent(config, plan, schedule, artifacts: RunArtifacts, seed: int) -> None:
    chain_rng, truth_rng = _streams(seed)
    keep = config["fusion"]["write_trajectory"]
    result = coop_latent_sample(
        plan, schedule, chain_rng, n_chains=config["n_chains"], record_trajectory=keep
    )
    artifacts.write_samples("samples.csv", result.x0)
    if keep:
        artifacts.write_trajectory("trajectory_a.csv", result.trajectory_a)
        artifacts.write_trajectory("trajectory_b.csv", result.trajectory_b)
    run_id = f"latent_d{plan.d:g}"
    truth = _pixel_truth(plan.a, result.x0.shape[0], truth_rng)
    if truth is not None:
        n = result.x0.shape[0]
        artifacts.write_metrics(
            [MetricRow(run_id, "frechet", frechet_between(result.x0, truth), n, seed)]
        )
        artifacts.notes.append(FRECHET_NOTE)
    _write_density(artifacts, result.x0)


def _fuse_resolution(config, models, codecs, schedule, artifacts: RunArtifacts, seed: int) -> None:
    fusion = config["fusion"]
    modes = ["coop", "naive"] if fusion["upsample_mode"] == "both" else [fusion["upsample_mode"]]
    keep = fusion["write_trajectory"]
    n = config["n_chains"]
    rows: List[MetricRow] = []
    results = {}
    for mode in modes:
        plan = builders.fusion_plan_from_config(config, models, codecs, upsample_mode=mode)
        chain_rng, _ = _streams(seed)
        result = coop_resolution_sample(
            plan, schedule, chain_rng, n_chains=n, record_trajectory=keep
        )
        results[mode] = result
        suffix = "" if mode == modes[0] else f"_{mode}"
        artifacts.write_samples(f"samples{suffix}.csv", result.x0)
        if keep:
            artifacts.write_trajectory(f"trajectory_high{suffix}.csv", result.trajectory_a)
            artifacts.write_trajectory(f"trajectory_low{suffix}.csv", result.trajectory_b)

    plan = builders.fusion_plan_from_config(config, models, codecs)
    _, truth_rng = _streams(seed)
    reference = None
    if n > plan.a.codec.pixel_dim:
        # pure high-resolution sampling, the target both modes are scored against
        reference_rng = RngStream(seed, spawn_key=(2,))
        latent = sample_loop(
            plan.a.model,
            plan.a.cond,
            plan.a.guidance,
            plan.sampler,
            schedule,
            reference_rng,
            n_chains=n,
            record_trajectory=False,
        ).x0
        reference = decode(plan.a.codec, latent)
        for mode, result in results.items():
            score = frechet_between(result.x0, reference)
            rows.append(MetricRow(f"resolution_{mode}", "frechet", score, n, seed))
        artifacts.notes.append(FRECHET_NOTE)

    handoff = next(iter(results.values())).handoff
    if n >= 2 and handoff is not None:
        T_low = plan.T_low
        eps_low = plan.b.predict(handoff, T_low)
        report = whiteness_report(
            handoff, T_low, eps_low, plan.b.codec, plan.a.codec, plan.up, schedule, truth_rng
        )
        for name in ("coop_rho", "naive_rho", "coop_variance", "naive_variance"):
            rows.append(MetricRow(f"whiteness_T{T_low}", name, getattr(report, name), n, seed))
    if rows:
        artifacts.write_metrics(rows)


def cmd_fuse(config, out_dir: str, seed: int) -> int:
    schedule = builders.schedule_from_config(config)
    models = builders.models_from_config(config, schedule)
    codecs = builders.codecs_from_config(config)
    artifacts = RunArtifacts(out_dir, "fuse", config, seed)
    if config["fusion"]["mode"] == "latent_fusion":
        plan = builders.fusion_plan_from_config(config, models, codecs)
        _fuse_latent(config, plan, schedule, artifacts, seed)
    else:
        _fuse_resolution(config, models, codecs, schedule, artifacts, seed)
    artifacts.write_manifest()
    return EXIT_OK


def cmd_train(config, out_dir: str, seed: int) -> int:
    train = config["train"]
    schedule = builders.schedule_from_config(config)
    task = make_task(train["task"])
    budget = builders.budget_from_config(train)
    result = train_role(
        task,
        train["role"],
        budget.width,
        budget.steps,
        budget,
        schedule,
        train["T_struct"],
        seed,
        structure_data=train["structure_data"],
        texture_resolution=train["texture_resolution"],
    )
    artifacts = RunArtifacts(out_dir, "train", config, seed)
    save_mlp(result.model, artifacts.path("model.bin"))
    artifacts.record("model.bin")
    curve = result.loss_curve
    window = min(50, len(curve))
    running = smoothed(curve, window)
    padded = np.concatenate([np.full(window - 1, np.nan), running])
    artifacts.write_rows(
        "loss_curve.csv",
        ["step", "loss", "smoothed_loss"],
        ([step, loss, smooth] for step, (loss, smooth) in enumerate(zip(curve, padded))),
    )
    artifacts.notes.append(
        f"role={train['role']} t_range={list(result.timesteps_seen)} "
        f"param_steps={result.param_steps}"
    )
    artifacts.write_manifest()
    return EXIT_OK


def cmd_ablate_tstruct(config, out_dir: str, seed: int) -> int:
    ablation = config["ablation"]
    schedule = builders.schedule_from_config(config)
    rows = run_tstruct_ablation(
        make_task(ablation["task"]),
        ablation["values"],
        schedule,
        builders.budget_from_config(ablation["budget"]),
        seeds=[seed + s for s in ablation["seeds"]],
    )
    artifacts = RunArtifacts(out_dir, "ablate-tstruct", config, seed)
    artifacts.write_rows(
        "ablate.csv",
        ["T_struct", "frechet", "n_seeds"],
        ([r.T_struct, r.frechet, r.n_seeds] for r in rows),
    )
    artifacts.notes.append(FRECHET_NOTE)
    artifacts.write_manifest()
    best = min(rows, key=lambda r: r.frechet)
    print(f"best T_struct={best.T_struct} frechet={best.frechet:.6g}")
    return EXIT_OK


def cmd_compare_strategies(config, out_dir: str, seed: int) -> int:
    ablation = config["ablation"]
    schedule = builders.schedule_from_config(config)
    rows = run_strategy_comparison(
        make_task(ablation["task"]),
        schedule,
        builders.budget_from_config(ablation["budget"]),
        seeds=[seed + s for s in ablation["seeds"]],
        T_struct=ablation["T_struct"],
    )
    artifacts = RunArtifacts(out_dir, "compare-strategies", config, seed)
    artifacts.write_rows(
        "compare.csv",
        ["arm", "seed", "parameters", "optimizer_steps", "cost_param_x_steps", "frechet"],
        ([r.arm, r.seed, r.parameters, r.optimizer_steps, r.param_steps, r.frechet] for r in rows),
    )
    artifacts.notes.extend([FRECHET_NOTE, COST_NOTE])
    artifacts.write_manifest()
    for arm, value in mean_by_arm(rows).items():
        print(f"{arm}: frechet={value:.6g}")
    return EXIT_OK


def cmd_eval(config, out_dir: str, seed: int) -> int:
    spec = config["eval"]
    samples = read_samples_csv(spec["samples"])
    n = samples.shape[0]
    rows: List[MetricRow] = []
    if "reference" in spec:
        reference = read_samples_csv(spec["reference"])
        if reference.shape[1] != samples.shape[1]:
            raise ConfigurationError(
                f"Samples have {samples.shape[1]} coordinates, reference has {reference.shape[1]}"
            )
        rows.append(MetricRow("eval", "frechet", frechet_between(samples, reference), n, seed))
    else:
        schedule = builders.schedule_from_config(config)
        model = builders.models_from_config(config, schedule)[spec["oracle"]]
        if not isinstance(model, GaussianMixtureDenoiser):
            raise ConfigurationError(
                f"`eval.oracle` must name a mixture model, `{model.name}` is not one"
            )
        if samples.shape[1] != model.mixture.dim:
            raise ConfigurationError(
                f"Samples have {samples.shape[1]} coordinates, oracle has {model.mixture.dim}"
            )
        _, truth_rng = _streams(seed)
        cond = Condition.parse(config["condition"])
        rows = _oracle_rows("eval", samples, model, cond, truth_rng, seed)
    artifacts = RunArtifacts(out_dir, "eval", config, seed)
    artifacts.write_metrics(rows)
    artifacts.notes.append(FRECHET_NOTE)
    artifacts.write_manifest()
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "fuse": cmd_fuse,
    "train": cmd_train,
    "ablate-tstruct": cmd_ablate_tstruct,
    "compare-strategies": cmd_compare_strategies,
    "eval": cmd_eval,
}
