"""
Run outputs. Every file is written atomically; CSVs have a header row and a fixed
column order, floats are written with 17 significant digits.
"""
import csv
import io
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .. import __version__
from ..evaluation import MetricRow, format_value, metrics_csv
from ..exceptions import ConfigurationError, ShapeError
from ..numerics import Grid
from ..sampling.pipelines import Trajectory
from ..utils import atomic_write_bytes, atomic_write_text, sha256_of

logger = logging.getLogger(__name__)

FRECHET_NOTE = "frechet: Gaussian Frechet distance on raw coordinates (no feature network)"
COST_NOTE = "cost_param_x_steps: parameters x optimizer steps; hardware costs are not modelled"


class RunArtifacts:
    """
    Collects the files one command writes into `out_dir`, then the manifest.
    """

    def __init__(self, out_dir: str, command: str, config: Dict[str, Any], seed: int):
        self.out_dir = out_dir
        self.command = command
        self.config = config
        self.seed = seed
        self.written: List[str] = []
        self.notes: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def record(self, name: str) -> None:
        if name not in self.written:
            self.written.append(name)
        logger.info("Wrote %(path)s", {"path": self.path(name)})

    def write_text(self, name: str, text: str) -> None:
        atomic_write_text(self.path(name), text)
        self.record(name)

    def write_bytes(self, name: str, payload: bytes) -> None:
        atomic_write_bytes(self.path(name), payload)
        self.record(name)

    def write_rows(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        self.write_text(name, rows_csv(header, rows))

    def write_samples(self, name: str, samples: Grid) -> None:
        self.write_text(name, samples_csv(samples))

    def write_trajectory(self, name: str, trajectory: Trajectory) -> None:
        self.write_text(name, trajectory_csv(trajectory))

    def write_metrics(self, rows: Iterable[MetricRow], name: str = "metrics.csv") -> None:
        self.write_text(name, metrics_csv(rows))

    def write_manifest(self) -> Dict[str, Any]:
        manifest = {
            "tool": "coop-diffusion",
            "version": __version__,
            "command": self.command,
            "config_sha256": sha256_of(self.config),
            "seed": self.seed,
            "artifacts": list(self.written),
            "notes": list(self.notes),
        }
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        atomic_write_text(self.path("manifest.json"), text)
        return manifest


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_value(value)
    return str(value)


def rows_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def coordinate_header(dim: int) -> List[str]:
    return [f"c{i}" for i in range(dim)]


def samples_csv(samples: Grid) -> str:
    """
    One row per chain; a chain's grid is flattened row-major into `c0..c{d-1}`.
    """
    samples = np.asarray(samples, dtype=np.float64)
    flat = samples.reshape(samples.shape[0], -1)
    return rows_csv(coordinate_header(flat.shape[1]), flat.tolist())


def trajectory_csv(trajectory: Trajectory) -> str:
    rows = []
    dim = None
    for t, z in list(trajectory.steps) + [(0, trajectory.x0)]:
        flat = np.asarray(z, dtype=np.float64)
        flat = flat.reshape(flat.shape[0], -1)
        dim = flat.shape[1]
        rows.extend([chain, t] + values for chain, values in enumerate(flat.tolist()))
    return rows_csv(["chain", "t"] + coordinate_header(dim or 0), rows)


def read_samples_csv(path: str) -> np.ndarray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration as e:
            raise ConfigurationError(f"`{path}` is empty") from e
        if not header or not all(h.startswith("c") for h in header):
            raise ConfigurationError(f"`{path}` is not a samples file")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as e:
            raise ConfigurationError(f"`{path}` has a non-numeric entry") from e
    if not rows:
        raise ConfigurationError(f"`{path}` has no samples")
    return np.asarray(rows, dtype=np.float64)


def density_pgm(samples, bins: int = 64, extent: Optional[Sequence[float]] = None) -> bytes:
    """
    2-D histogram of `(n, 2)` samples rendered as an 8-bit binary PGM, y axis up.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ShapeError(f"Density renders need (n, 2) samples, got {samples.shape}")
    if extent is None:
        lo, hi = samples.min(axis=0), samples.max(axis=0)
        pad = 0.05 * np.maximum(hi - lo, 1e-9)
        extent = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
    counts, _, _ = np.histogram2d(
        samples[:, 0], samples[:, 1], bins=bins, range=[extent[:2], extent[2:]]
    )
    image = counts.T[::-1]
    peak = image.max()
    pixels = np.zeros_like(image) if peak == 0 else np.rint(255.0 * image / peak)
    header = f"P5\n{bins} {bins}\n255\n".encode("ascii")
    return header + pixels.astype(np.uint8).tobytes()
