"""
Forward noising and its closed-form inverses.

`t` may be a scalar or one timestep per leading batch entry.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import NumericalDomainError, ShapeError
from ..numerics import Grid, NoiseSchedule

MIN_ALPHA_BAR = 1e-12


def _alpha_bar(schedule: NoiseSchedule, t, like: np.ndarray, allow_zero: bool) -> np.ndarray:
    schedule.check_timestep(t, allow_zero=allow_zero)
    ab = np.asarray(schedule.alpha_bar[np.asarray(t)], dtype=np.float64)
    if ab.ndim == 0:
        return ab
    if ab.ndim != 1 or like.ndim < 1 or like.shape[0] != ab.shape[0]:
        raise ShapeError(
            f"Per-sample timesteps {ab.shape} don't match the batch of shape {like.shape}"
        )
    return ab.reshape((-1,) + (1,) * (like.ndim - 1))


def _same_shape(a, b, what: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def q_sample(x0, t, eps, schedule: NoiseSchedule) -> Grid:
    x0, eps = _same_shape(x0, eps, "`q_sample`")
    ab = _alpha_bar(schedule, t, x0, allow_zero=True)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(z_t, t, eps_pred, schedule: NoiseSchedule) -> Grid:
    z_t, eps_pred = _same_shape(z_t, eps_pred, "`predict_x0`")
    ab = _alpha_bar(schedule, t, z_t, allow_zero=True)
    if np.any(ab < MIN_ALPHA_BAR):
        raise NumericalDomainError(f"alpha_bar at t={t} is below {MIN_ALPHA_BAR}")
    return (z_t - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)


def invert_to_eps(z_t, t, x0_like, schedule: NoiseSchedule) -> Grid:
    """
    Epsilon that `predict_x0` would map to `x0_like` at `(z_t, t)`.
    """
    z_t, x0_like = _same_shape(z_t, x0_like, "`invert_to_eps`")
    if np.any(np.asarray(t) == 0):
        raise NumericalDomainError("Cannot invert to epsilon at t=0 (alpha_bar = 1)")
    ab = _alpha_bar(schedule, t, z_t, allow_zero=False)
    return (z_t - np.sqrt(ab) * x0_like) / np.sqrt(1.0 - ab)
