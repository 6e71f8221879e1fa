import logging

import numpy as np
import pytest

from coop_diffusion.models.base import StageDenoiser
from coop_diffusion.models.mixture import GaussianMixture, GaussianMixtureDenoiser
from coop_diffusion.numerics import build_schedule
from coop_diffusion.query_capture.utils import (
    TimestepPartitionExceededException,
    restrict_timesteps,
)


@pytest.fixture
def stages():
    schedule = build_schedule(100, 1e-3, 0.02)
    model = GaussianMixtureDenoiser(GaussianMixture.single(np.zeros(2), 1.0), schedule)
    return StageDenoiser(model, "structure"), StageDenoiser(model, "texture")


ALLOWED = {"structure": (51, 100), "texture": (1, 50)}


def test_queries_inside_the_partition_pass(stages):
    structure, texture = stages
    with restrict_timesteps(ALLOWED) as guard:
        structure.predict_eps(np.zeros(2), 51)
        texture.predict_eps(np.zeros(2), 50)
    # inner queries are recorded first; the unnamed mixture model is not checked
    assert [q["model"] for q in guard.get_queries()] == [
        "mixture",
        "structure",
        "mixture",
        "texture",
    ]


def test_exception_when_a_stage_leaves_its_range(stages):
    structure, texture = stages
    with pytest.raises(TimestepPartitionExceededException) as exc:
        with restrict_timesteps(ALLOWED, run_name="test"):
            for _ in range(3):
                structure.predict_eps(np.zeros(2), 20)
            texture.predict_eps(np.zeros(2), 80)

    message = str(exc.value)
    assert "Timestep partition violated on test" in message
    assert "structure=[51, 100], texture=[1, 50]" in message
    assert "Out-of-range queries=4" in message
    assert "(repeats 3x)" in message
    assert "model=texture t=80" in message
    assert len(exc.value.violations) == 4


def test_restrict_timesteps_as_decorator(stages):
    structure, _ = stages

    @restrict_timesteps(ALLOWED)
    def run():
        structure.predict_eps(np.zeros(2), 10)

    with pytest.raises(TimestepPartitionExceededException):
        run()


def test_warning_when_only_log_is_true(stages, caplog):
    structure, _ = stages
    with caplog.at_level(logging.WARNING):
        with restrict_timesteps(ALLOWED, run_name="test", only_log=True):
            structure.predict_eps(np.zeros(2), 10)

    assert len(caplog.records) == 1
    assert "Timestep partition violated on test" in caplog.records[0].msg
    assert "Out-of-range queries=1" in caplog.records[0].msg


def test_errors_inside_the_block_propagate_unchanged(stages):
    structure, _ = stages
    with pytest.raises(KeyError):
        with restrict_timesteps(ALLOWED):
            structure.predict_eps(np.zeros(2), 10)
            raise KeyError("boom")
