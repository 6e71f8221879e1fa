"""
Records every denoiser query made inside a context, hooking `BaseDenoiser.predict_eps`
through `models.base.query_wrapper`.
"""
import time
import typing
from contextlib import ContextDecorator, ExitStack

import numpy as np

from typing_extensions import TypedDict

from ..models.base import query_wrapper


class CapturedQuery(TypedDict):
    """
    One `predict_eps` call: which model, at which timestep and condition, on how many
    chains, and how long it took.
    """

    model: str
    t: int
    cond: str
    batch_shape: typing.Tuple[int, ...]
    duration: float


class denoiser_query_capture(ContextDecorator):  # noqa: N801
    """
    `ContextDecorator` collecting [CapturedQuery][capture.CapturedQuery] records in
    `self.captured_queries`, in call order.
    """

    def __init__(self):
        self._exit_stack = ExitStack().__enter__()
        self.captured_queries: typing.List[CapturedQuery] = []

    def __enter__(self) -> "denoiser_query_capture":
        self._exit_stack.enter_context(query_wrapper(self._save_query))
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self._exit_stack.close()

    def __len__(self) -> int:
        return len(self.captured_queries)

    def for_model(self, name: str) -> typing.List[CapturedQuery]:
        return [q for q in self.captured_queries if q["model"] == name]

    def timesteps(self, name: str) -> typing.List[int]:
        return [q["t"] for q in self.for_model(name)]

    def _save_query(self, execute, model, z, t, cond):
        start_timestamp = time.monotonic()
        result = execute(model, z, t, cond)
        duration = time.monotonic() - start_timestamp
        shape = model.shape if model.shape is not None else np.shape(z)[-2:]
        self.captured_queries.append(
            {
                "model": model.name,
                "t": int(t),
                "cond": str(cond),
                "batch_shape": tuple(np.shape(z)[: np.ndim(z) - len(shape)]),
                "duration": duration,
            }
        )
        return result
