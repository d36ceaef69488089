"""Rasterise a mixture sequence into a probability heatmap (CSV grid + 8-bit PGM)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .multipac import MultiPacParams, clustered_length, consolidate, proposals_to_json, retained
from .types import PredictionSequence

MAX_CELLS = 4_000_000


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    x0: float  # lower-left corner
    y0: float
    cell: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.cell <= 0 or self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs a positive cell size and at least one cell")
        if self.nx * self.ny > MAX_CELLS:
            raise GridTooLarge(f"grid of {self.nx}x{self.ny} cells exceeds {MAX_CELLS}")

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.cell

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.cell

    @classmethod
    def covering(cls, lo, hi, cell: float = 0.25) -> "Grid":
        lo = np.floor(np.asarray(lo, dtype=float) / cell) * cell
        hi = np.asarray(hi, dtype=float)
        n = np.maximum(np.ceil((hi - lo) / cell).astype(int), 1)
        if n[0] * n[1] > MAX_CELLS:
            raise GridTooLarge(f"grid of {n[0]}x{n[1]} cells exceeds {MAX_CELLS}")
        return cls(float(lo[0]), float(lo[1]), cell, int(n[0]), int(n[1]))


def sequence_bounds(pred: PredictionSequence, tau: float, extra_points=None, n_sigma: float = 4.0):
    """Box around every retained component (mean +- n_sigma stdev) and any extra points."""
    lo = np.full(2, np.inf)
    hi = np.full(2, -np.inf)
    for st in pred.steps[: clustered_length(pred)]:
        for _, c in retained(st, tau):
            mu, sd = np.asarray(c.mean), np.asarray(c.stdev)
            lo = np.minimum(lo, mu - n_sigma * sd)
            hi = np.maximum(hi, mu + n_sigma * sd)
    if extra_points is not None and len(extra_points):
        pts = np.asarray(extra_points, dtype=float).reshape(-1, 2)
        lo = np.minimum(lo, pts.min(0))
        hi = np.maximum(hi, pts.max(0))
    return lo, hi


def density_grid(pred: PredictionSequence, grid: Grid, tau: float = 0.5) -> np.ndarray:
    """Retained-component density summed over the clustered steps, shape (ny, nx)."""
    X, Y = np.meshgrid(grid.xs, grid.ys)
    out = np.zeros_like(X)
    for st in pred.steps[: clustered_length(pred)]:
        for _, c in retained(st, tau):
            (mx, my), (sx, sy), r = c.mean, c.stdev, c.corr
            zx, zy = (X - mx) / sx, (Y - my) / sy
            one = 1.0 - r * r
            z = zx * zx + zy * zy - 2.0 * r * zx * zy
            out += c.weight * np.exp(-z / (2.0 * one)) / (2.0 * math.pi * sx * sy * math.sqrt(one))
    return out


def grid_csv(grid: Grid, values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "density"])
    xs, ys = grid.xs, grid.ys
    for j in range(grid.ny):
        for i in range(grid.nx):
            w.writerow([f"{xs[i]:.4f}", f"{ys[j]:.4f}", repr(float(values[j, i]))])
    return buf.getvalue()


def to_pgm(values: np.ndarray) -> bytes:
    """Binary 8-bit PGM scaled to the largest cell; the first image row is the largest y."""
    v = np.asarray(values, dtype=float)
    top = v.max()
    img = np.zeros(v.shape, dtype=np.uint8) if top <= 0 else np.round(255.0 * v / top).astype(np.uint8)
    img = img[::-1]
    ny, nx = img.shape
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + img.tobytes()


def read_pgm(buf: bytes) -> np.ndarray:
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    data = parts[4]
    return np.frombuffer(data[: nx * ny], dtype=np.uint8).reshape(ny, nx)


def export(pred: PredictionSequence, out_path, cell: float = 0.25, params: MultiPacParams = MultiPacParams(),
           origin=(0.0, 0.0), grid: Optional[Grid] = None, extra_points=None) -> dict:
    """Write <stem>.csv, <stem>.pgm and <stem>.json (proposals) next to out_path."""
    if grid is None:
        lo, hi = sequence_bounds(pred, params.tau, extra_points)
        grid = Grid.covering(lo, hi, cell)
    values = density_grid(pred, grid, params.tau)
    proposals = consolidate(pred, params, origin)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    paths = {"csv": stem.with_suffix(".csv"), "pgm": stem.with_suffix(".pgm"), "json": stem.with_suffix(".json")}
    paths["csv"].write_text(grid_csv(grid, values))
    paths["pgm"].write_bytes(to_pgm(values))
    side = {"grid": {"x0": grid.x0, "y0": grid.y0, "cell": grid.cell, "nx": grid.nx, "ny": grid.ny},
            "proposals": proposals_to_json(proposals)}
    paths["json"].write_text(json.dumps(side, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
