import django
from django.conf import settings

import numpy as np
import pytest

from coop_diffusion.numerics import NoiseSchedule, RngStream, build_schedule


def pytest_configure(*args):
    settings.configure(
        DEBUG_PROPAGATE_EXCEPTIONS=True,
        USE_I18N=False,
        SECRET_KEY="not very secret in tests",
        INSTALLED_APPS=(
            "django.contrib.contenttypes",
            "rest_framework",
        ),
    )

    django.setup()


@pytest.fixture
def schedule() -> NoiseSchedule:
    return build_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def short_schedule() -> NoiseSchedule:
    # few steps with large betas, so alpha_bar[T] stays well away from 0
    return build_schedule(10, 0.05, 0.2)


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)


@pytest.fixture
def quarter_schedule() -> NoiseSchedule:
    # alpha_bar = [1, 0.5, 0.25]
    return NoiseSchedule.from_alpha_bar([1.0, 0.5, 0.25])


def assert_bit_identical(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    assert a.tobytes() == b.tobytes()
