import numpy as np
import pytest

from coop_diffusion.codecs import ResolutionOp
from coop_diffusion.exceptions import ParameterError, ShapeError, TrainingDivergedError
from coop_diffusion.models.base import UNCONDITIONAL, Condition
from coop_diffusion.models.mixture import GaussianMixture
from coop_diffusion.models.mlp import MlpArchitecture, MlpDenoiser
from coop_diffusion.models.training import (
    MixtureData,
    PoolData,
    TrainSpec,
    make_structure_pool,
    smoothed,
    train_denoiser,
)
from coop_diffusion.numerics import RngStream
from coop_diffusion.sampling.algebra import predict_x0


def vector_model(dim=2, width=32, T=10, seed=0, labels=("unconditional",)):
    arch = MlpArchitecture(
        layout="vector",
        grid_shape=(dim,),
        hidden=(width,),
        time_embed_dim=8,
        labels=labels,
        T=T,
    )
    return MlpDenoiser.initialize(arch, RngStream(seed))


def two_modes():
    means = np.array([[-2.0, 0.0], [2.0, 0.0]])
    return GaussianMixture(np.array([0.5, 0.5]), means, np.full(2, 0.25))


def test_train_spec_validation():
    with pytest.raises(ParameterError):
        TrainSpec(t_range=(0, 10))
    with pytest.raises(ParameterError):
        TrainSpec(t_range=(6, 5))
    with pytest.raises(ParameterError):
        TrainSpec(t_range=(1, 10), resolution_policy="crop")
    with pytest.raises(ParameterError):
        TrainSpec(t_range=(1, 10), learning_rate=0.0)
    with pytest.raises(ParameterError):
        TrainSpec(t_range=(1, 10), steps=0)


def test_train_spec_must_fit_the_schedule(short_schedule):
    spec = TrainSpec(t_range=(1, 11))
    with pytest.raises(ParameterError):
        train_denoiser(vector_model(), MixtureData(two_modes()), spec, short_schedule)


def test_point_mass_structure_model_predicts_the_mean(short_schedule):
    data = PoolData(np.zeros((1, 2)))
    spec = TrainSpec(t_range=(6, 10), steps=3000, learning_rate=0.05, batch_size=64, seed=1)
    result = train_denoiser(vector_model(seed=1), data, spec, short_schedule)

    z_T = RngStream(2).normal((2000, 2))
    eps = result.model.predict_eps(z_T, 10)
    x0_hat = predict_x0(z_T, 10, eps, short_schedule)
    assert np.linalg.norm(x0_hat.mean(axis=0)) < 0.1


def test_loss_decreases_on_a_mixture(short_schedule):
    spec = TrainSpec(t_range=(1, 10), steps=1500, batch_size=64, seed=0)
    result = train_denoiser(vector_model(), MixtureData(two_modes()), spec, short_schedule)
    curve = smoothed(result.loss_curve, 100)
    assert len(result.loss_curve) == 1500
    assert curve[-1] < curve[0]


def test_training_is_deterministic(short_schedule):
    spec = TrainSpec(t_range=(1, 10), steps=50, seed=4)
    data = MixtureData(two_modes())
    a = train_denoiser(vector_model(seed=3), data, spec, short_schedule)
    b = train_denoiser(vector_model(seed=3), data, spec, short_schedule)
    assert a.model.flat_parameters().tobytes() == b.model.flat_parameters().tobytes()
    assert a.loss_curve == b.loss_curve


def test_training_only_sees_its_timestep_range(short_schedule):
    spec = TrainSpec(t_range=(6, 10), steps=200, seed=0)
    result = train_denoiser(vector_model(), MixtureData(two_modes()), spec, short_schedule)
    assert 6 <= result.timesteps_seen[0] <= result.timesteps_seen[1] <= 10
    assert result.timesteps_seen == (6, 10)

    spec = TrainSpec(t_range=(1, 5), steps=200)
    texture = train_denoiser(vector_model(), MixtureData(two_modes()), spec, short_schedule)
    assert texture.timesteps_seen == (1, 5)


def test_param_step_cost(short_schedule):
    model = vector_model()
    result = train_denoiser(
        model, MixtureData(two_modes()), TrainSpec(t_range=(1, 10), steps=7), short_schedule
    )
    assert result.param_steps == 7 * model.architecture.parameter_count


def test_divergence_reports_the_step(short_schedule):
    data = PoolData(np.full((4, 2), 1e3))
    spec = TrainSpec(t_range=(1, 10), steps=500, learning_rate=50.0, seed=0)
    with pytest.raises(TrainingDivergedError) as exc, np.errstate(all="ignore"):
        train_denoiser(vector_model(), data, spec, short_schedule)
    assert 0 <= exc.value.step < 500
    assert f"step {exc.value.step}" in str(exc.value)


def test_conditional_mixture_data_labels_every_draw():
    data = MixtureData(two_modes(), conditional_weights={"class:left": [0.99, 0.01]})
    x0, conds = data.sample(4000, RngStream(0))
    assert x0.shape == (4000, 2)
    left = np.array([c == Condition.class_label("left") for c in conds])
    assert 0.45 < left.mean() < 0.55
    assert np.mean(x0[left, 0] < 0) > 0.97
    assert {c.key for c in conds} == {"unconditional", "class:left"}


def test_pool_data_samples_with_replacement():
    pool = PoolData(np.arange(3.0)[:, None, None] * np.ones((3, 2, 2)))
    items, conds = pool.sample(3000, RngStream(0))
    assert items.shape == (3000, 2, 2)
    assert conds == [UNCONDITIONAL] * 3000
    counts = np.bincount(items[:, 0, 0].astype(int), minlength=3)
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 0.04)


def test_pool_data_validation():
    with pytest.raises(ShapeError):
        PoolData(np.zeros(3))
    with pytest.raises(ShapeError):
        PoolData(np.zeros((3, 2)), conditions=[UNCONDITIONAL])
    with pytest.raises(ParameterError):
        PoolData(np.zeros((0, 2))).sample(1, RngStream(0))


def test_structure_pool_with_empty_low_res_is_the_high_res_pool():
    high = PoolData(np.ones((5, 4, 4)))
    low = PoolData(np.zeros((0, 2, 2)))
    assert make_structure_pool(high, low, ResolutionOp(2)) is high


def test_structure_pool_is_a_uniform_union():
    high = PoolData(np.ones((100, 4, 4)))
    low = PoolData(np.zeros((100, 2, 2)))
    pool = make_structure_pool(high, low, ResolutionOp(2))
    assert len(pool) == 200
    assert pool.shape == (4, 4)

    items, _ = pool.sample(20000, RngStream(0))
    assert items.shape == (20000, 4, 4)
    from_high = np.all(items == 1.0, axis=(1, 2))
    from_low = np.all(items == 0.0, axis=(1, 2))
    assert np.all(from_high | from_low)
    assert abs(from_high.mean() - 0.5) < 0.02


def test_structure_pool_rejects_incompatible_resolutions():
    high = PoolData(np.ones((5, 4, 4)))
    with pytest.raises(ShapeError):
        make_structure_pool(high, PoolData(np.zeros((5, 3, 3))), ResolutionOp(2))
    with pytest.raises(ParameterError):
        make_structure_pool(
            high, PoolData(np.zeros((5, 2, 2))), ResolutionOp(2, mode="average_pool_down")
        )


def test_upscale_policy_needs_low_res_data(short_schedule):
    spec = TrainSpec(t_range=(6, 10), resolution_policy="upscale_low_res_into_pool", steps=5)
    with pytest.raises(ParameterError):
        train_denoiser(vector_model(), MixtureData(two_modes()), spec, short_schedule)


def test_train_at_low_res_downsamples_the_data(short_schedule):
    arch = MlpArchitecture(
        layout="patch",
        hidden=(8,),
        time_embed_dim=4,
        resolutions=((2, 2), (4, 4)),
        resolution_embed_dim=2,
        T=10,
    )
    model = MlpDenoiser.initialize(arch, RngStream(0))
    spec = TrainSpec(t_range=(1, 5), resolution_policy="train_at_low_res", steps=20, batch_size=8)
    result = train_denoiser(model, PoolData(np.ones((4, 4, 4))), spec, short_schedule)
    assert len(result.loss_curve) == 20
    assert result.model.predict_eps(np.zeros((4, 4)), 3).shape == (4, 4)
