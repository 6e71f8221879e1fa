"""
Noise schedules, seeded randomness and the dense grid value type.

A grid is a float64 `numpy.ndarray` validated by `as_grid`. Every operation in the
package also accepts a leading batch axis, so many chains run as one array.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from typing_extensions import Literal

from .exceptions import ParameterError, ShapeError
from .utils import as_shape, shape_size

logger = logging.getLogger(__name__)

Grid = npt.NDArray[np.float64]
Shape = Tuple[int, ...]

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02

_MAX_SEED = 2**64


def as_grid(data, shape: Optional[Sequence[int]] = None) -> Grid:
    """
    Builds a read-only float64 grid.
    With `shape`, `data` may be flat (row-major) and is reshaped; `product(shape)`
    must equal the number of entries.
    """
    arr = np.array(data, dtype=np.float64, copy=True)
    if shape is not None:
        shape = as_shape(shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"Grid shape must be positive, got {shape}")
        if arr.size != shape_size(shape):
            raise ShapeError(
                f"Grid data has {arr.size} entries but shape {shape} needs {shape_size(shape)}"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ParameterError("Grid entries must be finite (no NaN/Inf)")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        alpha_bar = np.array(self.alpha_bar, dtype=np.float64, copy=True)
        if self.T < 1:
            raise ParameterError(f"`T` must be >= 1, got {self.T}")
        if alpha_bar.shape != (self.T + 1,):
            raise ParameterError(
                f"`alpha_bar` needs T+1={self.T + 1} entries, got {alpha_bar.shape}"
            )
        if alpha_bar[0] != 1.0:
            raise ParameterError("`alpha_bar[0]` must be exactly 1")
        if not (np.all(alpha_bar[1:] > 0.0) and np.all(np.diff(alpha_bar) < 0.0)):
            raise ParameterError("`alpha_bar` must be strictly decreasing and positive")
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @classmethod
    def from_alpha_bar(cls, values: Iterable[float]) -> "NoiseSchedule":
        values = [float(v) for v in values]
        if not values or values[0] != 1.0:
            values = [1.0] + values
        return cls(T=len(values) - 1, alpha_bar=np.asarray(values))

    @property
    def betas(self) -> np.ndarray:
        # betas[0] is a placeholder for the t = 0 convention
        return np.concatenate([[0.0], 1.0 - self.alpha_bar[1:] / self.alpha_bar[:-1]])

    def check_timestep(self, t, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        t_arr = np.asarray(t)
        if not np.issubdtype(t_arr.dtype, np.integer):
            raise ParameterError(f"Timestep must be an integer, got {t!r}")
        if np.any(t_arr < low) or np.any(t_arr > self.T):
            raise ParameterError(f"Timestep {t!r} outside [{low}, {self.T}]")

    def at(self, t) -> Union[float, np.ndarray]:
        self.check_timestep(t, allow_zero=True)
        return self.alpha_bar[t]


def build_schedule(
    T: int = DEFAULT_T,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    kind: Literal["linear"] = "linear",
) -> NoiseSchedule:
    if kind != "linear":
        raise ParameterError(f"Unknown schedule kind `{kind}`, only `linear` is supported")
    if int(T) != T or T < 1:
        raise ParameterError(f"`T` must be a positive integer, got {T!r}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(
            f"Need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    betas = np.linspace(beta_min, beta_max, int(T), dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    logger.debug(
        "Built linear schedule T=%(T)s, alpha_bar[T]=%(last)s",
        {"T": T, "last": alpha_bar[-1]},
    )
    return NoiseSchedule(T=int(T), alpha_bar=alpha_bar)


class RngStream:
    """
    Counter-based (Philox) random stream.
    Same seed and same call sequence give bit-identical draws. `split` derives
    independent child streams from the seed and a spawn path, without consuming
    draws from the parent.
    """

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()):
        seed = int(seed)
        if not (0 <= seed < _MAX_SEED):
            raise ParameterError(f"`seed` must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.spawn_key: Tuple[int, ...] = tuple(int(k) for k in spawn_key)
        self._n_children = 0
        seed_sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.Philox(seed_sequence))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"

    def normal(self, shape: Sequence[int]) -> np.ndarray:
        return self._generator.standard_normal(size=tuple(shape))

    def uniform(self, size=None) -> np.ndarray:
        return self._generator.random(size=size)

    def integers(self, low: int, high_inclusive: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high_inclusive, size=size, endpoint=True)

    def split(self, n: int = 1) -> List["RngStream"]:
        children = [
            RngStream(self.seed, self.spawn_key + (self._n_children + i,)) for i in range(n)
        ]
        self._n_children += n
        return children


def gaussian_noise(shape: Sequence[int], rng: RngStream) -> Grid:
    shape = as_shape(shape)
    if not shape:
        raise ShapeError("`shape` must be nonempty")
    return rng.normal(shape)
