"""2D loss-surface grids along two random directions.

The grid samples L(theta + alpha*d1 + beta*d2) on a uniform
(resolution x resolution) lattice over [-extent, extent]^2. Directions are
Gaussian draws; with per_neuron normalization each neuron's direction
slice (one weight-matrix row plus its bias entry) is rescaled to the norm
of the matching parameter slice, so the sampled box has comparable reach
in every part of a trained network regardless of layer scaling.

Axis coordinates are built symmetrically around an exact 0.0 center, so
the center cell is the unperturbed loss and an even loss around a
symmetric point produces an exactly symmetric grid.

Non-finite loss values are stored as nan, never raised; the grid records
how many cells were flagged.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .data import RegressionDataset
from .mlp import MLPParams, _loss_of_kind, forward_with_cache
from .validation import as_float_array

__all__ = [
    "NORMALIZATIONS",
    "LandscapeGrid",
    "symmetric_axis",
    "random_directions",
    "grid_over",
    "loss_grid",
    "network_landscape",
    "export_grid",
    "import_grid",
]

NORMALIZATIONS = ("none", "per_neuron")
DEFAULT_RESOLUTION = 51
DEFAULT_EXTENT = 1.0


@dataclass(eq=False)
class LandscapeGrid:
    """values[i, j] = loss at theta + alphas[i]*d1 + betas[j]*d2."""

    values: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    extent: float
    normalization: str = "none"
    direction_seed: Optional[int] = None

    @property
    def resolution(self) -> int:
        return len(self.alphas)

    @property
    def center_value(self) -> float:
        mid = self.resolution // 2
        return float(self.values[mid, mid])

    @property
    def n_nonfinite(self) -> int:
        return int((~np.isfinite(self.values)).sum())

    def metadata(self) -> dict:
        return {
            "resolution": self.resolution,
            "extent": self.extent,
            "normalization": self.normalization,
            "direction_seed": self.direction_seed,
            "center_value": self.center_value,
            "n_nonfinite": self.n_nonfinite,
        }


def _check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if resolution < 3 or resolution % 2 == 0:
        raise ValueError(f"resolution must be odd and >= 3, got {resolution}")
    return resolution


def symmetric_axis(resolution: int, extent: float) -> np.ndarray:
    """Uniform grid coordinates with an exact 0.0 center and exact symmetry.

    axis[k] == -axis[resolution-1-k] holds bitwise, which keeps even-loss
    grids exactly symmetric.
    """
    resolution = _check_resolution(resolution)
    if not extent > 0:
        raise ValueError(f"extent must be > 0, got {extent}")
    half = resolution // 2
    pos = np.arange(1, half + 1) * (float(extent) / half)
    return np.concatenate([-pos[::-1], [0.0], pos])


def random_directions(params: MLPParams, seed: int,
                      normalization: str = "per_neuron") -> Tuple[np.ndarray, np.ndarray]:
    """Two independent Gaussian direction vectors shaped like ``params.flat``.

    With per_neuron normalization every neuron slice of each direction is
    rescaled to the norm of the same slice of ``params``; a zero-norm
    parameter slice zeroes the direction slice.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        d = rng.standard_normal(params.flat.size)
        if normalization == "per_neuron":
            dview = MLPParams(params.widths, d)
            for (Wd, bd), (Wp, bp) in zip(dview.layers, params.layers):
                norm_p = np.sqrt((Wp ** 2).sum(axis=1) + bp ** 2)
                norm_d = np.sqrt((Wd ** 2).sum(axis=1) + bd ** 2)
                scale = np.where(norm_d > 0, norm_p / np.where(norm_d > 0, norm_d, 1.0), 0.0)
                Wd *= scale[:, None]
                bd *= scale
        out.append(d)
    return out[0], out[1]


def grid_over(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray,
              d1: np.ndarray, d2: np.ndarray,
              resolution: int = DEFAULT_RESOLUTION,
              extent: float = DEFAULT_EXTENT) -> LandscapeGrid:
    """Evaluate an arbitrary scalar loss over the 2D slice through theta."""
    theta = as_float_array(theta, "theta", ndim=1)
    d1 = as_float_array(d1, "d1", ndim=1)
    d2 = as_float_array(d2, "d2", ndim=1)
    if d1.shape != theta.shape or d2.shape != theta.shape:
        raise ValueError("directions must match theta's shape")
    alphas = symmetric_axis(resolution, extent)
    betas = alphas.copy()
    values = np.empty((len(alphas), len(betas)))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            v = float(loss_fn(theta + a * d1 + b * d2))
            values[i, j] = v if math.isfinite(v) else math.nan
    return LandscapeGrid(values, alphas, betas, float(extent))


def loss_grid(params: MLPParams, dataset: RegressionDataset, loss: str,
              d1: np.ndarray, d2: np.ndarray,
              resolution: int = DEFAULT_RESOLUTION,
              extent: float = DEFAULT_EXTENT) -> LandscapeGrid:
    """Network data-loss grid, evaluated one alpha-row of cells at a time."""
    d1 = as_float_array(d1, "d1", ndim=1)
    d2 = as_float_array(d2, "d2", ndim=1)
    if d1.shape != params.flat.shape or d2.shape != params.flat.shape:
        raise ValueError("directions must match the parameter count")
    loss_fn = _loss_of_kind(loss)
    alphas = symmetric_axis(resolution, extent)
    betas = alphas.copy()
    res = len(alphas)
    X = np.broadcast_to(dataset.inputs, (res,) + dataset.inputs.shape)
    values = np.empty((res, res))
    with np.errstate(all="ignore"):
        for i, a in enumerate(alphas):
            thetas = params.flat[None, :] + a * d1[None, :] + betas[:, None] * d2[None, :]
            pred, _ = forward_with_cache(thetas, params.widths, X)
            row, _ = loss_fn(pred, dataset.targets)
            values[i] = np.where(np.isfinite(row), row, np.nan)
    return LandscapeGrid(values, alphas, betas, float(extent))


def network_landscape(params: MLPParams, dataset: RegressionDataset,
                      loss: str = "mse", seed: int = 0,
                      normalization: str = "per_neuron",
                      resolution: int = DEFAULT_RESOLUTION,
                      extent: float = DEFAULT_EXTENT) -> LandscapeGrid:
    """Draw seeded directions and evaluate the grid in one call."""
    d1, d2 = random_directions(params, seed, normalization)
    grid = loss_grid(params, dataset, loss, d1, d2, resolution, extent)
    grid.normalization = normalization
    grid.direction_seed = int(seed)
    return grid


def export_grid(grid: LandscapeGrid, path, meta_path=None) -> None:
    """CSV matrix: beta coordinates across the header row, alpha down the
    first column; optional companion JSON with the grid metadata."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + [repr(float(b)) for b in grid.betas])
        for i, a in enumerate(grid.alphas):
            writer.writerow([repr(float(a))] + [repr(float(v)) for v in grid.values[i]])
    if meta_path is not None:
        with open(meta_path, "w") as fh:
            json.dump(grid.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def import_grid(path, meta_path=None) -> LandscapeGrid:
    """Read a grid written by export_grid; metadata fills in provenance."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 4 or rows[0][0] != "":
        raise ValueError(f"{path}: not a landscape grid CSV")
    betas = np.array([float(c) for c in rows[0][1:]])
    if any(len(r) != len(betas) + 1 for r in rows[1:]):
        raise ValueError(f"{path}: ragged grid rows")
    alphas = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
    extent = float(alphas[-1])
    normalization = "none"
    seed = None
    if meta_path is not None and os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        extent = float(meta.get("extent", extent))
        normalization = meta.get("normalization", normalization)
        seed = meta.get("direction_seed")
    return LandscapeGrid(values, alphas, betas, extent, normalization, seed)
