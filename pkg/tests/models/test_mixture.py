import numpy as np
import pytest

from coop_diffusion.codecs import orthogonal_codec
from coop_diffusion.evaluation import mixture_occupancy
from coop_diffusion.exceptions import ParameterError, ShapeError
from coop_diffusion.models.base import UNCONDITIONAL, Condition
from coop_diffusion.models.mixture import (
    GaussianMixture,
    GaussianMixtureDenoiser,
    diffused_log_density,
    gm_predict_eps,
)
from coop_diffusion.numerics import NoiseSchedule, RngStream


def numerical_eps(gm, z, t, schedule, h=1e-5):
    grad = np.zeros_like(z)
    for i in range(z.size):
        step = np.zeros_like(z)
        step.flat[i] = h
        up = diffused_log_density(gm, z + step, t, schedule)
        down = diffused_log_density(gm, z - step, t, schedule)
        grad.flat[i] = (up - down) / (2 * h)
    return -np.sqrt(1.0 - schedule.alpha_bar[t]) * grad


@pytest.fixture
def two_modes():
    return GaussianMixture(
        np.array([0.3, 0.7]), np.array([[-2.0, 0.5], [1.5, -1.0]]), np.array([0.25, 0.64])
    )


def test_symmetric_mixture_is_zero_at_origin(schedule):
    gm = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 2.0], [1.0, -2.0]]), np.ones(2))
    np.testing.assert_allclose(gm_predict_eps(gm, np.zeros(2), 400, schedule), 0.0, atol=1e-15)


def test_standard_normal_oracle(quarter_schedule):
    gm = GaussianMixture.single(np.zeros(1), 1.0)
    eps = gm_predict_eps(gm, np.array([2.0]), 2, quarter_schedule)
    assert eps[0] == pytest.approx(1.732051, abs=1e-6)


def test_single_gaussian_closed_form(schedule):
    mu, var = np.array([1.5, -0.5]), 0.3
    gm = GaussianMixture.single(mu, var)
    z = np.array([0.2, 0.9])
    for t in (1, 250, 1000):
        ab = schedule.alpha_bar[t]
        expected = np.sqrt(1 - ab) * (z - np.sqrt(ab) * mu) / (ab * var + 1 - ab)
        np.testing.assert_allclose(gm_predict_eps(gm, z, t, schedule), expected, rtol=1e-12)
    np.testing.assert_allclose(
        gm_predict_eps(gm, z, 300, schedule), numerical_eps(gm, z, 300, schedule), rtol=1e-6
    )


def test_noise_vanishes_at_the_mean(schedule):
    gm = GaussianMixture.single(np.array([0.7, 0.1]), 0.5)
    z = np.sqrt(schedule.alpha_bar[1]) * gm.means[0]
    assert np.max(np.abs(gm_predict_eps(gm, z, 1, schedule))) < 1e-12


def test_oracle_matches_finite_differences(two_modes, schedule):
    rng = RngStream(0)
    timesteps = rng.integers(1, 1000, size=100)
    points = 2.0 * rng.normal((100, 2))
    for t, z in zip(timesteps, points):
        t = int(t)
        analytic = gm_predict_eps(two_modes, z, t, schedule)
        numeric = numerical_eps(two_modes, z, t, schedule)
        rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-3)
        assert rel < 1e-6, (t, z)


def test_oracle_is_stable_far_from_the_modes(two_modes, schedule):
    eps = gm_predict_eps(two_modes, np.array([[1e3, -1e3], [-50.0, 80.0]]), 1, schedule)
    assert np.all(np.isfinite(eps))


def test_oracle_batches(two_modes, schedule):
    z = RngStream(1).normal((4, 3, 2))
    batched = gm_predict_eps(two_modes, z, 10, schedule)
    assert batched.shape == (4, 3, 2)
    np.testing.assert_allclose(
        batched[2, 1], gm_predict_eps(two_modes, z[2, 1], 10, schedule), rtol=1e-13
    )


def test_oracle_rejects_bad_inputs(two_modes, schedule):
    with pytest.raises(ParameterError):
        gm_predict_eps(two_modes, np.zeros(2), 0, schedule)
    with pytest.raises(ParameterError):
        gm_predict_eps(two_modes, np.zeros(2), 1001, schedule)
    with pytest.raises(ShapeError):
        gm_predict_eps(two_modes, np.zeros(3), 5, schedule)


@pytest.mark.parametrize(
    "weights, variances",
    [([0.5, 0.6], [1.0, 1.0]), ([1.0, 0.0], [1.0, 1.0]), ([0.5, 0.5], [1.0, 0.0]), ([1.0], [1.0])],
)
def test_mixture_invariants(weights, variances):
    with pytest.raises(ParameterError):
        GaussianMixture(np.array(weights), np.zeros((2, 2)), np.array(variances))


def test_mixture_sample_occupancy(two_modes):
    samples, components = two_modes.sample(20000, RngStream(2))
    assert samples.shape == (20000, 2)
    np.testing.assert_allclose(np.bincount(components) / 20000, [0.3, 0.7], atol=0.015)
    np.testing.assert_allclose(mixture_occupancy(samples, two_modes), [0.3, 0.7], atol=0.02)


def test_pushforward_is_equivariant(two_modes, schedule):
    codec = orthogonal_codec([2], seed=4)
    q = codec.forward_matrix
    latent = two_modes.pushforward(codec)
    np.testing.assert_allclose(latent.means, two_modes.means @ q.T, atol=1e-12)
    z = np.array([0.4, -1.3])
    np.testing.assert_allclose(
        gm_predict_eps(latent, q @ z, 200, schedule),
        q @ gm_predict_eps(two_modes, z, 200, schedule),
        atol=1e-12,
    )


def test_pushforward_scales_variances(two_modes):
    latent = two_modes.pushforward(orthogonal_codec([2], seed=4, scale=3.0))
    np.testing.assert_allclose(latent.variances, two_modes.variances * 9.0)


def test_upsample_keeps_weights_and_variances():
    means = np.stack([np.ones((2, 2)), -np.ones((2, 2))])
    gm = GaussianMixture(np.array([0.5, 0.5]), means, np.array([1.0, 2.0]))
    up = gm.upsample(2)
    assert up.shape == (4, 4)
    np.testing.assert_array_equal(up.means[0], np.ones((4, 4)))
    np.testing.assert_array_equal(up.variances, gm.variances)


def test_mixture_dict_round_trip(two_modes):
    restored = GaussianMixture.from_dict(two_modes.to_dict())
    np.testing.assert_array_equal(restored.means, two_modes.means)
    np.testing.assert_array_equal(restored.weights, two_modes.weights)


def test_mixture_denoiser_conditions(two_modes, schedule):
    model = GaussianMixtureDenoiser(
        two_modes, schedule, conditional_weights={"class:left": [0.99, 0.01]}, name="oracle"
    )
    z = np.array([0.0, 0.0])
    left = model.predict_eps(z, 500, Condition.class_label("left"))
    expected = gm_predict_eps(two_modes, z, 500, schedule, weights=np.array([0.99, 0.01]))
    np.testing.assert_array_equal(left, expected)
    assert not np.allclose(left, model.predict_eps(z, 500, UNCONDITIONAL))

    with pytest.raises(ParameterError) as exc:
        model.predict_eps(z, 500, Condition.class_label("right"))
    assert "class:left" in str(exc.value)


def test_mixture_denoiser_rejects_bad_weights(two_modes, schedule):
    with pytest.raises(ParameterError):
        GaussianMixtureDenoiser(two_modes, schedule, conditional_weights={"class:a": [1.0]})


def test_schedule_fixture_matches_quarter(quarter_schedule):
    assert isinstance(quarter_schedule, NoiseSchedule)
    assert quarter_schedule.alpha_bar[2] == 0.25
