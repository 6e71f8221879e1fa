"""
Small tanh MLP epsilon-predictor with hand-written reverse mode.

Two layouts:
- `vector`: the whole flattened grid is one input row, the output is the whole grid.
- `patch`: every pixel of a [H, W] grid is one row (its k x k neighbourhood, reflect
  padded), the output is that pixel's epsilon. The network is resolution-agnostic, so a
  model trained on small grids can sample large ones; the resolution index embedding
  tells it which size it is looking at.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from typing_extensions import Literal

from ..exceptions import ParameterError, ShapeError
from ..numerics import Grid, RngStream, Shape
from ..utils import as_shape, shape_size, sinusoidal_embedding, split_batch
from .base import BaseDenoiser, Condition

logger = logging.getLogger(__name__)

ConditionArg = Union[Condition, Sequence[Condition]]


@dataclass(frozen=True)
class MlpArchitecture:
    layout: Literal["vector", "patch"]
    grid_shape: Shape = ()
    hidden: Tuple[int, ...] = (64, 64)
    patch_size: int = 3
    time_embed_dim: int = 16
    labels: Tuple[str, ...] = ("unconditional",)
    resolutions: Tuple[Shape, ...] = ()
    resolution_embed_dim: int = 0
    T: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", as_shape(self.grid_shape))
        object.__setattr__(self, "hidden", as_shape(self.hidden))
        object.__setattr__(self, "labels", tuple(Condition.parse(k).key for k in self.labels))
        object.__setattr__(self, "resolutions", tuple(as_shape(r) for r in self.resolutions))
        if self.layout not in ("vector", "patch"):
            raise ParameterError(f"Unknown MLP layout `{self.layout}`")
        if self.layout == "vector" and not self.grid_shape:
            raise ParameterError("A `vector` MLP needs its `grid_shape`")
        if self.layout == "patch" and (self.patch_size < 1 or self.patch_size % 2 == 0):
            raise ParameterError("`patch_size` must be a positive odd integer")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ParameterError("`hidden` needs at least one positive width")
        if not self.labels:
            raise ParameterError("`labels` needs at least one condition")
        if self.resolution_embed_dim and not self.resolutions:
            raise ParameterError("A resolution embedding needs the list of `resolutions`")

    @property
    def data_dim(self) -> int:
        if self.layout == "vector":
            return shape_size(self.grid_shape)
        return self.patch_size**2

    @property
    def input_dim(self) -> int:
        return self.data_dim + self.time_embed_dim + len(self.labels) + self.resolution_embed_dim

    @property
    def output_dim(self) -> int:
        return self.data_dim if self.layout == "vector" else 1

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        widths = (self.input_dim,) + self.hidden + (self.output_dim,)
        return [(n_out, n_in) for n_in, n_out in zip(widths[:-1], widths[1:])]

    @property
    def parameter_count(self) -> int:
        return sum(n_out * n_in + n_out for n_out, n_in in self.layer_shapes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layout": self.layout,
            "grid_shape": list(self.grid_shape),
            "hidden": list(self.hidden),
            "patch_size": self.patch_size,
            "time_embed_dim": self.time_embed_dim,
            "labels": list(self.labels),
            "resolutions": [list(r) for r in self.resolutions],
            "resolution_embed_dim": self.resolution_embed_dim,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpArchitecture":
        return cls(
            layout=data["layout"],
            grid_shape=tuple(data.get("grid_shape", ())),
            hidden=tuple(data["hidden"]),
            patch_size=int(data.get("patch_size", 3)),
            time_embed_dim=int(data.get("time_embed_dim", 16)),
            labels=tuple(data.get("labels", ("unconditional",))),
            resolutions=tuple(tuple(r) for r in data.get("resolutions", ())),
            resolution_embed_dim=int(data.get("resolution_embed_dim", 0)),
            T=int(data.get("T", 1000)),
        )


@dataclass
class ForwardCache:
    activations: List[np.ndarray]
    rows_shape: Tuple[int, ...]
    output: np.ndarray


Parameters = List[Tuple[np.ndarray, np.ndarray]]


class MlpDenoiser(BaseDenoiser):
    def __init__(self, architecture: MlpArchitecture, parameters: Parameters, name: str = "mlp"):
        self.architecture = architecture
        self.name = name
        self.shape = architecture.grid_shape if architecture.layout == "vector" else None
        expected = architecture.layer_shapes
        if len(parameters) != len(expected):
            raise ParameterError(f"`{name}` needs {len(expected)} layers, got {len(parameters)}")
        frozen: Parameters = []
        for (w, b), (n_out, n_in) in zip(parameters, expected):
            w = np.array(w, dtype=np.float64, copy=True)
            b = np.array(b, dtype=np.float64, copy=True)
            if w.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ShapeError(f"Layer shapes of `{name}` don't match its architecture")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ParameterError(f"`{name}` has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append((w, b))
        self.parameters = frozen

    @classmethod
    def initialize(
        cls, architecture: MlpArchitecture, rng: RngStream, name: str = "mlp"
    ) -> "MlpDenoiser":
        parameters = [
            (rng.normal((n_out, n_in)) / np.sqrt(n_in), np.zeros(n_out))
            for n_out, n_in in architecture.layer_shapes
        ]
        return cls(architecture, parameters, name=name)

    @classmethod
    def zeros(cls, architecture: MlpArchitecture, name: str = "mlp") -> "MlpDenoiser":
        parameters = [
            (np.zeros((n_out, n_in)), np.zeros(n_out)) for n_out, n_in in architecture.layer_shapes
        ]
        return cls(architecture, parameters, name=name)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.parameters])

    def with_flat_parameters(self, flat: np.ndarray) -> "MlpDenoiser":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.architecture.parameter_count,):
            raise ShapeError(
                f"`{self.name}` has {self.architecture.parameter_count} parameters, "
                f"got {flat.shape}"
            )
        parameters, offset = [], 0
        for n_out, n_in in self.architecture.layer_shapes:
            w = flat[offset : offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = flat[offset : offset + n_out]
            offset += n_out
            parameters.append((w, b))
        return MlpDenoiser(self.architecture, parameters, name=self.name)

    def with_parameters(self, parameters: Parameters) -> "MlpDenoiser":
        return MlpDenoiser(self.architecture, parameters, name=self.name)

    # features

    def _check_input(self, z: np.ndarray) -> None:
        if self.architecture.layout == "vector":
            super()._check_input(z)
        elif z.ndim < 2:
            raise ShapeError(f"`{self.name}` expects [H, W] grids, got shape {z.shape}")

    def _data_rows(self, z: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...], int]:
        arch = self.architecture
        if arch.layout == "vector":
            batch = split_batch(z, arch.grid_shape)
            if batch is None:
                raise ShapeError(f"`{self.name}` expects shape {arch.grid_shape}, got {z.shape}")
            n = int(np.prod(batch)) if batch else 1
            return z.reshape(n, arch.data_dim), batch, 1
        h, w = z.shape[-2:]
        grids = z.reshape((-1, h, w))
        r = arch.patch_size // 2
        mode = "reflect" if min(h, w) > r else "edge"
        padded = np.pad(grids, ((0, 0), (r, r), (r, r)), mode=mode)
        patches = sliding_window_view(padded, (arch.patch_size, arch.patch_size), axis=(1, 2))
        rows = patches.reshape(-1, arch.data_dim)
        return rows, z.shape[:-2], h * w

    def _resolution_index(self, grid_shape: Shape) -> int:
        try:
            return self.architecture.resolutions.index(tuple(grid_shape))
        except ValueError as e:
            raise ShapeError(
                f"`{self.name}` has no resolution index for {grid_shape}. "
                f"Choices are {self.architecture.resolutions}"
            ) from e

    def features(self, z, t, cond: ConditionArg) -> Tuple[np.ndarray, Tuple[int, ...]]:
        """
        Builds the input rows `concat(data, time embedding, one-hot condition,
        resolution embedding)`. `t` and `cond` are either shared by the whole batch or
        given per sample.
        """
        arch = self.architecture
        z = np.asarray(z, dtype=np.float64)
        data, batch, rows_per_sample = self._data_rows(z)
        n_samples = data.shape[0] // rows_per_sample

        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n_samples,))
        if np.any(t_arr < 0) or np.any(t_arr > arch.T):
            raise ParameterError(f"Timestep outside [0, {arch.T}] for `{self.name}`")
        time_emb = sinusoidal_embedding(t_arr, arch.time_embed_dim)

        conds = [cond] * n_samples if isinstance(cond, Condition) else list(cond)
        if len(conds) != n_samples:
            raise ShapeError(f"Got {len(conds)} conditions for {n_samples} samples")
        one_hot = np.zeros((n_samples, len(arch.labels)))
        for i, c in enumerate(conds):
            try:
                one_hot[i, arch.labels.index(c.key)] = 1.0
            except ValueError as e:
                raise ParameterError(
                    f"`{c.key}` is not a label of `{self.name}`. Choices are {arch.labels}"
                ) from e

        per_sample = [time_emb, one_hot]
        if arch.resolution_embed_dim:
            grid_shape = arch.grid_shape if arch.layout == "vector" else z.shape[-2:]
            res_emb = sinusoidal_embedding(
                [self._resolution_index(grid_shape)], arch.resolution_embed_dim
            )
            per_sample.append(np.broadcast_to(res_emb, (n_samples, arch.resolution_embed_dim)))
        extra = np.concatenate(per_sample, axis=1)
        extra = np.repeat(extra, rows_per_sample, axis=0)
        return np.concatenate([data, extra], axis=1), z.shape

    # forward / reverse

    def forward(self, z, t, cond: ConditionArg) -> ForwardCache:
        x, out_shape = self.features(z, t, cond)
        activations = [x]
        h = x
        for w, b in self.parameters[:-1]:
            h = np.tanh(h @ w.T + b)
            activations.append(h)
        w, b = self.parameters[-1]
        out = h @ w.T + b
        return ForwardCache(activations, out_shape, out.reshape(out_shape))

    def vjp(self, cache: ForwardCache, cotangent) -> Parameters:
        """
        Reverse-mode pass: gradients of `sum(output * cotangent)` for every (W, b).
        """
        grad_out = np.asarray(cotangent, dtype=np.float64).reshape(
            cache.activations[-1].shape[0], self.architecture.output_dim
        )
        grads: Parameters = []
        for layer in range(len(self.parameters) - 1, -1, -1):
            w, _ = self.parameters[layer]
            h_in = cache.activations[layer]
            grads.append((grad_out.T @ h_in, grad_out.sum(axis=0)))
            if layer:
                # tanh'(a) = 1 - tanh(a)^2
                grad_out = (grad_out @ w) * (1.0 - h_in**2)
        grads.reverse()
        return grads

    def _predict_eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.forward(z, t, cond).output


def mlp_predict_eps(m: MlpDenoiser, z_t, t: int, cond: Condition) -> Grid:
    return m.predict_eps(z_t, t, cond)


def mlp_gradients(
    m: MlpDenoiser, batch: Tuple[Any, Any, ConditionArg, Any]
) -> Tuple[float, Parameters]:
    """
    Mean squared epsilon error over the batch and its exact parameter gradients.
    `batch` is `(z_t, t, cond, target_eps)`; `t`/`cond` may be per sample.
    """
    z_t, t, cond, target = batch
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.size == 0:
        raise ShapeError("`mlp_gradients` needs a nonempty batch")
    cache = m.forward(z_t, t, cond)
    residual = cache.output - np.asarray(target, dtype=np.float64)
    loss = float(np.mean(residual**2))
    grads = m.vjp(cache, 2.0 * residual / residual.size)
    return loss, grads


def flatten_gradients(grads: Parameters) -> np.ndarray:
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
