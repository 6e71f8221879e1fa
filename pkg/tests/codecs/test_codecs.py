import numpy as np
import pytest

from coop_diffusion.codecs import (
    LinearCodec,
    ResolutionOp,
    codec_from_dict,
    codec_to_dict,
    decode,
    downsample,
    dump_codec,
    encode,
    identity_codec,
    interpolation_energy,
    load_codec,
    naive_upsample_latent,
    orthogonal_codec,
    scale_codec,
    upsample_pixel,
)
from coop_diffusion.exceptions import ParameterError, ShapeError
from coop_diffusion.numerics import RngStream


@pytest.mark.parametrize(
    "codec",
    [
        identity_codec([4, 4]),
        scale_codec([4, 4], 0.5),
        orthogonal_codec([4, 4], seed=3),
        orthogonal_codec([4, 4], seed=4, scale=2.0, bias_scale=0.3),
    ],
    ids=["identity", "scale", "orthogonal", "orthogonal-biased"],
)
def test_codec_round_trip(codec):
    x = RngStream(0).normal([5, 4, 4])
    np.testing.assert_allclose(decode(codec, encode(codec, x)), x, atol=1e-10)
    z = RngStream(1).normal([4, 4])
    np.testing.assert_allclose(codec.encode(codec.decode(z)), z, atol=1e-10)


def test_identity_codec_is_exact():
    x = RngStream(0).normal([3, 2])
    codec = identity_codec([2])
    assert encode(codec, x).tobytes() == x.tobytes()
    assert decode(codec, x).tobytes() == x.tobytes()


def test_scale_codec():
    codec = scale_codec([2], 0.5)
    np.testing.assert_array_equal(encode(codec, [2.0, -4.0]), [1.0, -2.0])
    with pytest.raises(ParameterError):
        scale_codec([2], 0.0)


def test_orthogonal_codec_is_seeded():
    a = orthogonal_codec([3, 3], seed=1)
    b = orthogonal_codec([3, 3], seed=1)
    c = orthogonal_codec([3, 3], seed=2)
    np.testing.assert_array_equal(a.forward_matrix, b.forward_matrix)
    assert not np.allclose(a.forward_matrix, c.forward_matrix)
    assert a.orthogonal_scale() == pytest.approx(1.0)
    assert orthogonal_codec([3, 3], seed=1, scale=2.5).orthogonal_scale() == pytest.approx(2.5)


def test_codec_rejects_non_invertible():
    forward = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(ParameterError) as exc:
        LinearCodec((2,), (2,), forward, np.zeros(2), name="singular")
    assert "`singular`" in str(exc.value)


def test_codec_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        LinearCodec((2,), (3,), np.eye(2), np.zeros(2))
    with pytest.raises(ShapeError):
        LinearCodec((2,), (2,), np.eye(2), np.zeros(3))


def test_encode_rejects_shape_mismatch():
    codec = identity_codec([4, 4])
    with pytest.raises(ShapeError):
        encode(codec, np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        decode(codec, np.zeros(16))


def test_linear_part_map_between_orthogonal_codecs():
    a = orthogonal_codec([2], seed=1)
    b = orthogonal_codec([2], seed=2)
    m = a.linear_part_map(b)
    np.testing.assert_allclose(m @ m.T, np.eye(2), atol=1e-12)
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(m @ encode(a, x), encode(b, x), atol=1e-12)

    with pytest.raises(ShapeError):
        a.linear_part_map(identity_codec([3]))


def test_noise_alignment_drops_the_scale_ratio():
    a = orthogonal_codec([3], seed=1, scale=2.0, bias_scale=0.3)
    b = orthogonal_codec([3], seed=2, scale=0.5)
    r = a.noise_alignment(b)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(r, a.linear_part_map(b) * 4.0, atol=1e-12)

    unit_a, unit_b = orthogonal_codec([3], seed=1), orthogonal_codec([3], seed=2)
    np.testing.assert_allclose(
        unit_a.noise_alignment(unit_b), unit_a.linear_part_map(unit_b), atol=1e-12
    )

    with pytest.raises(ShapeError):
        a.noise_alignment(identity_codec([4]))


def test_codec_serialization(tmp_path):
    codec = orthogonal_codec([2, 2], seed=9, scale=1.5, bias_scale=0.1, name="vae_b")
    restored = codec_from_dict(codec_to_dict(codec))
    assert restored.name == "vae_b"
    assert restored.pixel_shape == (2, 2)
    np.testing.assert_array_equal(restored.forward_matrix, codec.forward_matrix)
    np.testing.assert_allclose(restored.inverse_matrix, codec.inverse_matrix, atol=1e-12)

    path = tmp_path / "codec.json"
    dump_codec(codec, str(path))
    loaded = load_codec(str(path))
    np.testing.assert_array_equal(loaded.bias, codec.bias)


def test_downsample_constant_blocks_are_exact():
    x = np.kron(np.array([[0.1, 0.7], [-3.3, 1e-3]]), np.ones((2, 2)))
    np.testing.assert_array_equal(downsample(x, 2), [[0.1, 0.7], [-3.3, 1e-3]])


def test_downsample_averages_blocks():
    x = np.arange(16, dtype=float).reshape(4, 4)
    np.testing.assert_allclose(downsample(x, 2), [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_allclose(downsample(x, 4), [[7.5]])


def test_downsample_keeps_batch_axes():
    x = RngStream(0).normal([3, 5, 4, 4])
    assert downsample(x, 2).shape == (3, 5, 2, 2)


def test_downsample_rejects_indivisible():
    with pytest.raises(ShapeError):
        downsample(np.zeros((5, 4)), 2)
    with pytest.raises(ParameterError):
        downsample(np.zeros((4, 4)), 1)


def test_upsample_constant_is_exact():
    x = np.full((3, 3), 0.37)
    up = upsample_pixel(x, 2)
    assert up.shape == (6, 6)
    assert np.all(up == 0.37)


def test_upsample_is_corner_aligned():
    x = RngStream(2).normal([4, 5])
    up = upsample_pixel(x, 2)
    assert up.shape == (8, 10)
    assert up[0, 0] == x[0, 0]
    assert up[-1, -1] == x[-1, -1]
    assert up[0, -1] == x[0, -1]


def test_upsample_one_axis():
    up = upsample_pixel(np.array([0.0, 1.0]), 2, spatial_ndim=1)
    np.testing.assert_allclose(up, [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def test_naive_latent_upsample_correlates_noise():
    z = RngStream(3).normal([4000, 8, 8])
    up = naive_upsample_latent(z, 2)
    energy = interpolation_energy((8, 8), 2)
    assert up.shape == (4000, 16, 16)
    np.testing.assert_allclose(up.var(axis=0), energy, atol=0.15)
    assert energy.min() < 0.6
    assert energy.max() == pytest.approx(1.0)


def test_interpolation_energy_1d():
    np.testing.assert_allclose(
        interpolation_energy((2,), 2), [1.0, 5.0 / 9.0, 5.0 / 9.0, 1.0]
    )


def test_resolution_op():
    up = ResolutionOp(2)
    down = ResolutionOp(2, mode="average_pool_down")
    x = RngStream(0).normal([4, 4])
    assert up(x).shape == (8, 8)
    assert down(x).shape == (2, 2)
    assert up.output_shape((4, 4)) == (8, 8)
    assert down.output_shape((4, 4)) == (2, 2)
    with pytest.raises(ShapeError):
        down.output_shape((3, 4))
    with pytest.raises(ParameterError):
        ResolutionOp(2, mode="nearest")
