"""
Model files.

- MLP: one JSON header line, then the flat parameter block as little-endian float64.
- Mixture oracle: a plain JSON document.
"""
from __future__ import annotations

import json
import logging
from typing import Any, Dict, Optional, Union

import numpy as np

from ..exceptions import ConfigurationError
from ..numerics import NoiseSchedule
from ..utils import atomic_write_bytes, canonical_json
from .mixture import GaussianMixture, GaussianMixtureDenoiser
from .mlp import MlpArchitecture, MlpDenoiser

logger = logging.getLogger(__name__)

MLP_FORMAT = "coop-diffusion/mlp"
MIXTURE_FORMAT = "coop-diffusion/mixture"
FORMAT_VERSION = 1
_FLOAT = np.dtype("<f8")


def mlp_to_bytes(model: MlpDenoiser) -> bytes:
    header = {
        "format": MLP_FORMAT,
        "version": FORMAT_VERSION,
        "name": model.name,
        "architecture": model.architecture.to_dict(),
        "parameter_count": model.architecture.parameter_count,
    }
    block = model.flat_parameters().astype(_FLOAT).tobytes()
    return canonical_json(header).encode("utf-8") + b"\n" + block


def mlp_from_bytes(payload: bytes) -> MlpDenoiser:
    head, sep, block = payload.partition(b"\n")
    if not sep:
        raise ConfigurationError("MLP file has no header line")
    try:
        header = json.loads(head.decode("utf-8"))
    except ValueError as e:
        raise ConfigurationError("MLP file header is not valid JSON") from e
    if header.get("format") != MLP_FORMAT or header.get("version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"Unsupported model format `{header.get('format')}` v{header.get('version')}"
        )
    architecture = MlpArchitecture.from_dict(header["architecture"])
    flat = np.frombuffer(block, dtype=_FLOAT)
    if flat.shape[0] != architecture.parameter_count:
        raise ConfigurationError(
            f"MLP file has {flat.shape[0]} parameters, architecture needs "
            f"{architecture.parameter_count}"
        )
    return MlpDenoiser.zeros(architecture, name=header.get("name", "mlp")).with_flat_parameters(
        flat.astype(np.float64)
    )


def save_mlp(model: MlpDenoiser, path: str) -> None:
    atomic_write_bytes(path, mlp_to_bytes(model))
    logger.debug("Saved %(name)s to %(path)s", {"name": model.name, "path": path})


def load_mlp(path: str) -> MlpDenoiser:
    with open(path, "rb") as f:
        return mlp_from_bytes(f.read())


def mixture_to_dict(
    mixture: GaussianMixture, conditional_weights: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "format": MIXTURE_FORMAT,
        "version": FORMAT_VERSION,
        "mixture": mixture.to_dict(),
    }
    if conditional_weights:
        data["conditional_weights"] = {
            k: np.asarray(v, dtype=np.float64).tolist() for k, v in conditional_weights.items()
        }
    return data


def save_mixture(
    mixture: GaussianMixture, path: str, conditional_weights: Optional[Dict[str, Any]] = None
) -> None:
    atomic_write_bytes(
        path, canonical_json(mixture_to_dict(mixture, conditional_weights)).encode("utf-8")
    )


def _json_object(raw: bytes) -> Optional[Dict[str, Any]]:
    try:
        data = json.loads(raw.decode("utf-8"))
    except ValueError:
        return None
    return data if isinstance(data, dict) else None


def load_denoiser(
    path: str, schedule: NoiseSchedule, name: Optional[str] = None
) -> Union[MlpDenoiser, GaussianMixtureDenoiser]:
    """
    Loads either model kind, telling them apart by the header `format`.
    """
    with open(path, "rb") as f:
        payload = f.read()
    header = _json_object(payload.partition(b"\n")[0])
    if header is None or header.get("format") != MLP_FORMAT:
        # mixture documents may span several lines
        header = _json_object(payload)
    if header is None:
        raise ConfigurationError(f"`{path}` is not a model file")
    if header.get("format") == MLP_FORMAT:
        model = mlp_from_bytes(payload)
        if model.architecture.T != schedule.T:
            raise ConfigurationError(
                f"`{path}` was trained for T={model.architecture.T}, schedule has T={schedule.T}"
            )
        if name:
            model.name = name
        return model
    if header.get("format") == MIXTURE_FORMAT:
        mixture = GaussianMixture.from_dict(header["mixture"])
        return GaussianMixtureDenoiser(
            mixture,
            schedule,
            conditional_weights=header.get("conditional_weights"),
            name=name or "mixture",
        )
    raise ConfigurationError(f"`{path}` has unknown model format `{header.get('format')}`")
