from __future__ import annotations

import contextlib
import contextvars
import functools
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from typing_extensions import Literal

from ..exceptions import NumericalDomainError, ParameterError, ShapeError
from ..numerics import Grid, Shape
from ..utils import as_shape, split_batch

ConditionKind = Literal["unconditional", "class", "style"]

_query_wrappers: contextvars.ContextVar[Tuple[Callable, ...]] = contextvars.ContextVar(
    "denoiser_query_wrappers", default=()
)


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind = "unconditional"
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("unconditional", "class", "style"):
            raise ParameterError(f"Unknown condition kind `{self.kind}`")
        if (self.kind == "unconditional") != (self.label is None):
            raise ParameterError("Only labelled conditions (`class`, `style`) carry a `label`")
        if self.label is not None:
            object.__setattr__(self, "label", str(self.label))

    @classmethod
    def unconditional(cls) -> "Condition":
        return cls()

    @classmethod
    def class_label(cls, label) -> "Condition":
        return cls("class", str(label))

    @classmethod
    def style_label(cls, label) -> "Condition":
        return cls("style", str(label))

    @classmethod
    def parse(cls, key: str) -> "Condition":
        if key in ("", "unconditional"):
            return cls()
        kind, sep, label = key.partition(":")
        if not sep or kind not in ("class", "style"):
            raise ParameterError(
                f"Condition `{key}` must be `unconditional`, `class:<label>` or `style:<label>`"
            )
        return cls(kind, label)  # type: ignore[arg-type]

    @property
    def key(self) -> str:
        if self.kind == "unconditional":
            return "unconditional"
        return f"{self.kind}:{self.label}"

    def __str__(self):
        return self.key


UNCONDITIONAL = Condition()


@contextlib.contextmanager
def query_wrapper(wrapper: Callable) -> Iterator[None]:
    """
    Installs `wrapper(execute, model, z, t, cond)` around every `predict_eps` call in
    the current context. Wrappers nest, the innermost installed runs last.
    """
    token = _query_wrappers.set(_query_wrappers.get() + (wrapper,))
    try:
        yield
    finally:
        _query_wrappers.reset(token)


class BaseDenoiser:
    """
    Contract for epsilon-prediction models.
    `shape` is the per-sample latent shape; `None` means any 2-D grid is accepted.
    """

    name: str = "denoiser"
    shape: Optional[Shape] = None

    def predict_eps(self, z, t: int, cond: Condition = UNCONDITIONAL) -> Grid:
        z = np.asarray(z, dtype=np.float64)
        self._check_input(z)
        execute: Callable = self._execute
        for wrapper in reversed(_query_wrappers.get()):
            execute = functools.partial(wrapper, execute)
        eps = execute(self, z, t, cond)
        if eps.shape != z.shape:
            raise ShapeError(
                f"`{self.name}` returned shape {eps.shape} for an input of shape {z.shape}"
            )
        if not np.all(np.isfinite(eps)):
            raise NumericalDomainError(f"`{self.name}` produced a non-finite prediction at t={t}")
        return eps

    @staticmethod
    def _execute(model: "BaseDenoiser", z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return model._predict_eps(z, t, cond)

    def _check_input(self, z: np.ndarray) -> None:
        if self.shape is None:
            if z.ndim < 2:
                raise ShapeError(f"`{self.name}` expects [H, W] grids, got shape {z.shape}")
        elif split_batch(z, self.shape) is None:
            raise ShapeError(f"`{self.name}` expects shape {self.shape}, got {z.shape}")

    def _predict_eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        raise NotImplementedError  # pragma: no cover


class StageDenoiser(BaseDenoiser):
    """
    Named view over another denoiser, so pipeline stages show up separately in
    captured queries even when both stages share one model.
    """

    def __init__(self, inner: BaseDenoiser, name: str):
        self.inner = inner
        self.name = name
        self.shape = inner.shape

    def _predict_eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.inner.predict_eps(z, t, cond)


def resolve_shape(model: BaseDenoiser, shape: Optional[Sequence[int]]) -> Shape:
    if shape is not None:
        return as_shape(shape)
    if model.shape is None:
        raise ShapeError(f"`{model.name}` accepts any grid size, pass `shape` explicitly")
    return model.shape
