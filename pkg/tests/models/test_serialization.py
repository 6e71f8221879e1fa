import json

import numpy as np
import pytest

from coop_diffusion.exceptions import ConfigurationError
from coop_diffusion.models.mixture import GaussianMixture, GaussianMixtureDenoiser
from coop_diffusion.models.mlp import MlpArchitecture, MlpDenoiser
from coop_diffusion.models.serialization import (
    load_denoiser,
    load_mlp,
    mixture_to_dict,
    mlp_from_bytes,
    mlp_to_bytes,
    save_mixture,
    save_mlp,
)
from coop_diffusion.numerics import RngStream, build_schedule


@pytest.fixture
def model():
    arch = MlpArchitecture(layout="vector", grid_shape=(2,), hidden=(4,), time_embed_dim=4, T=10)
    return MlpDenoiser.initialize(arch, RngStream(0), name="structure")


def test_mlp_file_layout(model):
    payload = mlp_to_bytes(model)
    head, _, block = payload.partition(b"\n")
    header = json.loads(head)
    assert header["format"] == "coop-diffusion/mlp"
    assert header["version"] == 1
    assert header["name"] == "structure"
    assert header["parameter_count"] == model.architecture.parameter_count
    assert len(block) == 8 * model.architecture.parameter_count
    np.testing.assert_array_equal(np.frombuffer(block, dtype="<f8"), model.flat_parameters())


def test_mlp_file_round_trip(model, tmp_path):
    path = str(tmp_path / "model.bin")
    save_mlp(model, path)
    loaded = load_mlp(path)
    assert loaded.name == "structure"
    assert loaded.architecture == model.architecture
    z = RngStream(1).normal((3, 2))
    assert loaded.predict_eps(z, 4).tobytes() == model.predict_eps(z, 4).tobytes()


@pytest.mark.parametrize(
    "payload",
    [b"no header line", b"{not json\n", b'{"format": "other", "version": 1}\n'],
)
def test_mlp_file_rejects_bad_headers(payload):
    with pytest.raises(ConfigurationError):
        mlp_from_bytes(payload)


def test_mlp_file_rejects_truncated_block(model):
    with pytest.raises(ConfigurationError):
        mlp_from_bytes(mlp_to_bytes(model)[:-8])


def test_load_denoiser_dispatches_on_format(model, tmp_path):
    schedule = build_schedule(10, 0.05, 0.2)
    mlp_path = str(tmp_path / "model.bin")
    save_mlp(model, mlp_path)
    assert isinstance(load_denoiser(mlp_path, schedule, name="texture"), MlpDenoiser)
    assert load_denoiser(mlp_path, schedule, name="texture").name == "texture"

    gm = GaussianMixture(np.array([0.5, 0.5]), np.array([[1.0, 0.0], [-1.0, 0.0]]), np.ones(2))
    gm_path = str(tmp_path / "oracle.json")
    save_mixture(gm, gm_path, conditional_weights={"class:right": [0.9, 0.1]})
    oracle = load_denoiser(gm_path, schedule)
    assert isinstance(oracle, GaussianMixtureDenoiser)
    np.testing.assert_array_equal(oracle.mixture.means, gm.means)
    assert list(oracle.conditional_weights) == ["class:right"]


def test_load_denoiser_reads_pretty_printed_mixtures(tmp_path):
    gm = GaussianMixture(
        np.array([0.25, 0.75]), np.array([[1.5, -0.5], [-1.0, 2.0]]), np.array([0.5, 0.2])
    )
    path = tmp_path / "oracle.json"
    path.write_text(
        json.dumps(mixture_to_dict(gm, {"style:soft": [0.5, 0.5]}), indent=2, sort_keys=True)
    )
    oracle = load_denoiser(str(path), build_schedule(10, 0.05, 0.2), name="oracle")
    assert isinstance(oracle, GaussianMixtureDenoiser)
    assert oracle.name == "oracle"
    np.testing.assert_array_equal(oracle.mixture.weights, gm.weights)
    np.testing.assert_array_equal(oracle.mixture.means, gm.means)
    np.testing.assert_array_equal(oracle.mixture.variances, gm.variances)
    assert list(oracle.conditional_weights) == ["style:soft"]


def test_load_denoiser_checks_the_schedule_length(model, tmp_path):
    path = str(tmp_path / "model.bin")
    save_mlp(model, path)
    with pytest.raises(ConfigurationError):
        load_denoiser(path, build_schedule(1000, 1e-4, 0.02))


def test_load_denoiser_rejects_unknown_files(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text('{"format": "npz"}')
    with pytest.raises(ConfigurationError):
        load_denoiser(str(path), build_schedule(10, 0.05, 0.2))
    path.write_bytes(b"\x00\x01")
    with pytest.raises(ConfigurationError):
        load_denoiser(str(path), build_schedule(10, 0.05, 0.2))
