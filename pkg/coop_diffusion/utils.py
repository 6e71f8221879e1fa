from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from typing import Any, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

T = TypeVar("T")


def unique_keep_order(ls: Iterable[T]) -> List[T]:
    return list({x: None for x in ls}.keys())


def shape_size(shape: Sequence[int]) -> int:
    return int(math.prod(shape)) if shape else 1


def as_shape(shape: Iterable[int]) -> Tuple[int, ...]:
    return tuple(int(s) for s in shape)


def split_batch(x: np.ndarray, shape: Sequence[int]) -> Optional[Tuple[int, ...]]:
    """
    Returns the leading batch dims of `x`, given it ends with `shape`.
    Returns `None` when the trailing dims don't match.
    """
    n = len(shape)
    if x.ndim < n or tuple(x.shape[x.ndim - n :]) != tuple(shape):
        return None
    return tuple(x.shape[: x.ndim - n])


def sinusoidal_embedding(values, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """
    Transformer-style sinusoidal embedding of scalar positions (timesteps, resolution index).
    Returns an array of shape `(len(values), dim)`.
    """
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if dim == 0:
        return np.zeros((values.shape[0], 0))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = values[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((values.shape[0], 1))], axis=1)
    return emb


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
