"""
Invertible linear latent codecs (encoder/decoder pairs) and pixel-space resolution
operators.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import polar

from typing_extensions import Literal

from .exceptions import ParameterError, ShapeError
from .numerics import Grid, RngStream, Shape
from .utils import as_shape, atomic_write_text, shape_size, split_batch

logger = logging.getLogger(__name__)

ROUND_TRIP_TOLERANCE = 1e-10


@dataclass(frozen=True)
class LinearCodec:
    pixel_shape: Shape
    latent_shape: Shape
    forward_matrix: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    inverse_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    name: str = "codec"

    def __post_init__(self):
        pixel_shape = as_shape(self.pixel_shape)
        latent_shape = as_shape(self.latent_shape)
        forward = np.array(self.forward_matrix, dtype=np.float64, copy=True)
        bias = np.array(self.bias, dtype=np.float64, copy=True).reshape(-1)
        pixel_dim, latent_dim = shape_size(pixel_shape), shape_size(latent_shape)
        if forward.shape != (latent_dim, pixel_dim):
            raise ShapeError(
                f"`forward_matrix` of `{self.name}` must be {latent_dim}x{pixel_dim}, "
                f"got {forward.shape}"
            )
        if bias.shape != (latent_dim,):
            raise ShapeError(f"`bias` of `{self.name}` must have {latent_dim} entries")
        if self.inverse_matrix is None:
            inverse = np.linalg.pinv(forward)
        else:
            inverse = np.array(self.inverse_matrix, dtype=np.float64, copy=True)
        if inverse.shape != (pixel_dim, latent_dim):
            raise ShapeError(f"`inverse_matrix` of `{self.name}` must be {pixel_dim}x{latent_dim}")
        error = np.max(np.abs(inverse @ forward - np.eye(pixel_dim)))
        if not error <= ROUND_TRIP_TOLERANCE:
            raise ParameterError(
                f"Codec `{self.name}` is not invertible: |inverse . forward - I| = {error:.3e}"
            )
        for arr in (forward, bias, inverse):
            arr.setflags(write=False)
        object.__setattr__(self, "pixel_shape", pixel_shape)
        object.__setattr__(self, "latent_shape", latent_shape)
        object.__setattr__(self, "forward_matrix", forward)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "inverse_matrix", inverse)

    @property
    def pixel_dim(self) -> int:
        return shape_size(self.pixel_shape)

    @property
    def latent_dim(self) -> int:
        return shape_size(self.latent_shape)

    def encode(self, x) -> Grid:
        return encode(self, x)

    def decode(self, z) -> Grid:
        return decode(self, z)

    def orthogonal_scale(self) -> Optional[float]:
        """
        Returns `c` when `forward_matrix = c * Q` with `Q` orthogonal, else `None`.
        """
        if self.latent_dim != self.pixel_dim:
            return None
        gram = self.forward_matrix @ self.forward_matrix.T
        c2 = float(np.mean(np.diag(gram)))
        if c2 <= 0 or np.max(np.abs(gram - c2 * np.eye(self.latent_dim))) > 1e-9 * max(c2, 1.0):
            return None
        return float(np.sqrt(c2))

    def linear_part_map(self, other: "LinearCodec") -> np.ndarray:
        """
        Matrix re-expressing a bias-free latent (pure noise) of this codec in `other`'s
        latent space: `other.forward_matrix @ self.inverse_matrix`.
        """
        if self.pixel_shape != other.pixel_shape:
            raise ShapeError(
                f"Codecs `{self.name}` and `{other.name}` have different pixel shapes "
                f"{self.pixel_shape} != {other.pixel_shape}"
            )
        return other.forward_matrix @ self.inverse_matrix

    def noise_alignment(self, other: "LinearCodec") -> np.ndarray:
        """
        Orthogonal polar factor of [linear_part_map][codecs.LinearCodec.linear_part_map]:
        maps a standard-normal latent of this codec to a standard-normal latent of `other`.
        For scaled-orthogonal codecs it is `linear_part_map` with the scale ratio removed,
        so both latents decode to the same pixel-space direction.
        """
        mapping = self.linear_part_map(other)
        if mapping.shape[0] != mapping.shape[1]:
            raise ShapeError(
                f"Noise alignment needs equal latent sizes, got {self.latent_dim} and "
                f"{other.latent_dim}"
            )
        rotation, _ = polar(mapping)
        return rotation


def _flatten_checked(x, shape: Shape, what: str, codec_name: str) -> Tuple[np.ndarray, Tuple]:
    arr = np.asarray(x, dtype=np.float64)
    batch = split_batch(arr, shape)
    if batch is None:
        raise ShapeError(f"`{codec_name}` expects {what} shape {shape}, got {arr.shape}")
    return arr.reshape(batch + (shape_size(shape),)), batch


def encode(codec: LinearCodec, x) -> Grid:
    flat, batch = _flatten_checked(x, codec.pixel_shape, "pixel", codec.name)
    z = flat @ codec.forward_matrix.T + codec.bias
    return z.reshape(batch + codec.latent_shape)


def decode(codec: LinearCodec, z) -> Grid:
    flat, batch = _flatten_checked(z, codec.latent_shape, "latent", codec.name)
    x = (flat - codec.bias) @ codec.inverse_matrix.T
    return x.reshape(batch + codec.pixel_shape)


def identity_codec(shape: Sequence[int], name: str = "identity") -> LinearCodec:
    shape = as_shape(shape)
    d = shape_size(shape)
    return LinearCodec(shape, shape, np.eye(d), np.zeros(d), np.eye(d), name=name)


def scale_codec(shape: Sequence[int], scale: float, name: str = "scale") -> LinearCodec:
    if scale == 0:
        raise ParameterError("`scale` must be nonzero")
    shape = as_shape(shape)
    d = shape_size(shape)
    return LinearCodec(
        shape, shape, scale * np.eye(d), np.zeros(d), np.eye(d) / scale, name=name
    )


def orthogonal_codec(
    shape: Sequence[int],
    seed: int,
    scale: float = 1.0,
    bias_scale: float = 0.0,
    name: str = "orthogonal",
) -> LinearCodec:
    """
    Random orthogonal codec `z = scale * Q x + b`; `Q` from the QR decomposition of a
    Gaussian matrix, column signs fixed so `Q` is Haar-distributed.
    """
    if scale <= 0:
        raise ParameterError("`scale` must be positive")
    shape = as_shape(shape)
    d = shape_size(shape)
    rng = RngStream(seed)
    q, r = np.linalg.qr(rng.normal((d, d)))
    q = q * np.sign(np.diag(r))[None, :]
    bias = bias_scale * rng.normal((d,))
    return LinearCodec(shape, shape, scale * q, bias, q.T / scale, name=name)


def codec_to_dict(codec: LinearCodec) -> Dict[str, Any]:
    return {
        "name": codec.name,
        "pixel_shape": list(codec.pixel_shape),
        "latent_shape": list(codec.latent_shape),
        "forward_matrix": codec.forward_matrix.reshape(-1).tolist(),
        "bias": codec.bias.tolist(),
    }


def codec_from_dict(data: Dict[str, Any]) -> LinearCodec:
    pixel_shape = as_shape(data["pixel_shape"])
    latent_shape = as_shape(data["latent_shape"])
    forward = np.asarray(data["forward_matrix"], dtype=np.float64).reshape(
        shape_size(latent_shape), shape_size(pixel_shape)
    )
    # inverse is recomputed and the round trip re-verified by `LinearCodec.__post_init__`
    return LinearCodec(
        pixel_shape,
        latent_shape,
        forward,
        np.asarray(data["bias"], dtype=np.float64),
        name=data.get("name", "codec"),
    )


def dump_codec(codec: LinearCodec, path: str) -> None:
    atomic_write_text(path, json.dumps(codec_to_dict(codec)))


def load_codec(path: str) -> LinearCodec:
    with open(path, encoding="utf-8") as f:
        return codec_from_dict(json.load(f))


# Resolution operators


def _check_factor(factor: int) -> int:
    if int(factor) != factor or factor < 2:
        raise ParameterError(f"`factor` must be an integer >= 2, got {factor!r}")
    return int(factor)


def downsample(x, factor: int) -> Grid:
    """
    Average-pools the last two axes by `factor`.
    """
    factor = _check_factor(factor)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"`downsample` needs a [H, W] grid, got shape {arr.shape}")
    h, w = arr.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"Grid {h}x{w} is not divisible by factor {factor}")
    blocks = arr.reshape(arr.shape[:-2] + (h // factor, factor, w // factor, factor))
    # offset by the block's first entry, so constant blocks come back exactly
    ref = blocks[..., :1, :, :1]
    return (ref + (blocks - ref).mean(axis=(-3, -1), keepdims=True))[..., 0, :, 0]


def _interpolation_positions(n: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    m = n * factor
    if n == 1:
        return np.zeros(m, dtype=np.intp), np.zeros(m)
    # corner-aligned: output 0 and m-1 sit exactly on source 0 and n-1
    pos = np.arange(m, dtype=np.float64) * (n - 1) / (m - 1)
    lower = np.minimum(np.floor(pos).astype(np.intp), n - 2)
    return lower, pos - lower


def _lerp_axis(arr: np.ndarray, axis: int, factor: int) -> np.ndarray:
    lower, weight = _interpolation_positions(arr.shape[axis], factor)
    upper = np.minimum(lower + 1, arr.shape[axis] - 1)
    a = np.take(arr, lower, axis=axis)
    b = np.take(arr, upper, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = -1
    # `a + w * (b - a)` keeps equal neighbours exact
    return a + weight.reshape(shape) * (b - a)


def upsample_pixel(x, factor: int, spatial_ndim: int = 2) -> Grid:
    """
    Corner-aligned bilinear upsampling of the last `spatial_ndim` axes (1 or 2).
    """
    factor = _check_factor(factor)
    if spatial_ndim not in (1, 2):
        raise ParameterError("`spatial_ndim` must be 1 or 2")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < spatial_ndim:
        raise ShapeError(f"Grid of shape {arr.shape} has fewer than {spatial_ndim} axes")
    for axis in range(arr.ndim - spatial_ndim, arr.ndim):
        arr = _lerp_axis(arr, axis, factor)
    return arr


def naive_upsample_latent(z_t, factor: int) -> Grid:
    """
    Bilinear upsampling applied straight to an intermediate noisy latent.
    Kept as the comparison baseline: it correlates neighbouring noise entries.
    """
    return upsample_pixel(z_t, factor)


def interpolation_energy(shape: Sequence[int], factor: int) -> np.ndarray:
    """
    Per output site, the sum of squared bilinear weights: the variance that
    `upsample_pixel` gives an IID unit-variance field.
    """
    factor = _check_factor(factor)
    energies = []
    for n in as_shape(shape):
        _, w = _interpolation_positions(n, factor)
        energies.append((1.0 - w) ** 2 + w**2 if n > 1 else np.ones_like(w))
    if len(energies) == 1:
        return energies[0]
    return np.outer(energies[0], energies[1])


@dataclass(frozen=True)
class ResolutionOp:
    factor: int
    mode: Literal["average_pool_down", "bilinear_up"] = "bilinear_up"

    def __post_init__(self):
        _check_factor(self.factor)
        if self.mode not in ("average_pool_down", "bilinear_up"):
            raise ParameterError(f"Unknown resolution mode `{self.mode}`")

    def __call__(self, x) -> Grid:
        if self.mode == "bilinear_up":
            return upsample_pixel(x, self.factor)
        return downsample(x, self.factor)

    def output_shape(self, shape: Sequence[int]) -> Shape:
        h, w = as_shape(shape)[-2:]
        if self.mode == "bilinear_up":
            return (h * self.factor, w * self.factor)
        if h % self.factor or w % self.factor:
            raise ShapeError(f"Grid {h}x{w} is not divisible by factor {self.factor}")
        return (h // self.factor, w // self.factor)
