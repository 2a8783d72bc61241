"""Curvature statistics of the catalogued minima.

Eigenvalues of symmetric 2x2 Hessians are computed in closed form, turned
into per-minimum statistics (condition number, trace, determinant, largest
eigenvalue), and tabulated for every catalogued minimum. A frozen reference
table ships with the package; ``check_against_reference`` recomputes the
statistics from the analytic Hessians and reports any cell that falls
outside the printed-value tolerance, which is what ``minima-geom geometry
--check`` runs. Central finite-difference oracles for gradients and
Hessians live here as well so callers can cross-check any analytic
derivative against the value function alone.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from .objectives import OBJECTIVES, ObjectiveFunction
from .validation import check_point, check_symmetric_2x2

__all__ = [
    "HessianStats",
    "MinimumRow",
    "eigen_2x2",
    "hessian_stats",
    "fd_gradient_oracle",
    "fd_hessian_oracle",
    "minima_table",
    "write_table_csv",
    "REFERENCE_TABLE",
    "check_against_reference",
    "CellMismatch",
]

#: |lambda_min| below this is treated as singular (condition number = inf).
SINGULAR_EPS = 1e-12

#: Exact CSV header for the geometry table.
CSV_COLUMNS = (
    "function",
    "min_x",
    "min_y",
    "condition_number",
    "hessian_trace",
    "hessian_determinant",
    "max_eigenvalue",
)


def eigen_2x2(H) -> Tuple[float, float]:
    """Eigenvalues of a symmetric 2x2 matrix, closed form, (max, min).

    Uses the stable split lambda = mean +- sqrt(((a-d)/2)^2 + b^2), which is
    algebraically (tr +- sqrt(tr^2 - 4 det))/2 without the cancellation.
    """
    H = check_symmetric_2x2(H)
    a, b, d = H[0, 0], H[0, 1], H[1, 1]
    mean = 0.5 * (a + d)
    disc = math.hypot(0.5 * (a - d), b)
    return mean + disc, mean - disc


@dataclass(frozen=True)
class HessianStats:
    """Spectral summary of a symmetric 2x2 Hessian."""

    condition_number: float
    trace: float
    determinant: float
    max_eigenvalue: float
    min_eigenvalue: float
    singular: bool


def hessian_stats(H, singular_eps: float = SINGULAR_EPS) -> HessianStats:
    """Condition number, trace, determinant, and extreme eigenvalues of H.

    The condition number is |lambda_max| / |lambda_min|; when |lambda_min|
    falls below ``singular_eps`` it is reported as ``inf`` with the
    ``singular`` flag set instead of raising.
    """
    H = check_symmetric_2x2(H)
    hi, lo = eigen_2x2(H)
    singular = abs(lo) < singular_eps
    cond = math.inf if singular else abs(hi) / abs(lo)
    return HessianStats(
        condition_number=float(cond),
        trace=float(H[0, 0] + H[1, 1]),
        determinant=float(H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]),
        max_eigenvalue=float(hi),
        min_eigenvalue=float(lo),
        singular=bool(singular),
    )


# --- finite-difference oracles ---------------------------------------------

def fd_gradient_oracle(fn: Callable, point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of (x, y)."""
    p = check_point(point)
    g = np.empty(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        g[i] = (fn(*(p + e)) - fn(*(p - e))) / (2.0 * step)
    return g


def fd_hessian_oracle(fn: Callable, point, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of a scalar function of (x, y), symmetrized."""
    p = check_point(point)
    H = np.empty((2, 2))
    f0 = fn(*p)
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        H[i, i] = (fn(*(p + e)) - 2.0 * f0 + fn(*(p - e))) / (step * step)
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    H[0, 1] = H[1, 0] = (
        fn(*(p + ex + ey)) - fn(*(p + ex - ey)) - fn(*(p - ex + ey)) + fn(*(p - ex - ey))
    ) / (4.0 * step * step)
    return 0.5 * (H + H.T)


# --- the table ---------------------------------------------------------------

@dataclass(frozen=True)
class MinimumRow:
    """One catalogued minimum with its curvature statistics."""

    function: str
    min_x: float
    min_y: float
    stats: HessianStats


def minima_table(objectives: Iterable[ObjectiveFunction] | None = None) -> List[MinimumRow]:
    """Statistics at every catalogued minimum, in registry order."""
    if objectives is None:
        objectives = OBJECTIVES.values()
    rows = []
    for fn in objectives:
        for (mx, my) in fn.minima:
            stats = hessian_stats(fn.hessian((mx, my)))
            rows.append(MinimumRow(fn.name, mx, my, stats))
    return rows


def write_table_csv(rows: Sequence[MinimumRow], path) -> None:
    """Write the geometry table with the documented fixed column set."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row.function,
                repr(float(row.min_x)),
                repr(float(row.min_y)),
                repr(row.stats.condition_number),
                repr(row.stats.trace),
                repr(row.stats.determinant),
                repr(row.stats.max_eigenvalue),
            ])


# --- reference check ---------------------------------------------------------

#: Frozen reference statistics for every catalogued minimum, as
#: (function, (min_x, min_y), condition_number, trace, determinant,
#: max_eigenvalue). ``--check`` recomputes the table from the analytic
#: Hessians and compares cell by cell. Printed magnitudes below 100 carry
#: an absolute tolerance of 1e-3; larger ones a relative tolerance of 5e-4.
REFERENCE_TABLE: Tuple[Tuple[str, Tuple[float, float], float, float, float, float], ...] = (
    ("sphere", (0.0, 0.0), 1.000, 4.000, 4.000, 2.000),
    ("rosenbrock", (1.0, 1.0), 2508.010, 1002.000, 400.000, 1001.600),
    ("rastrigin", (0.0, 0.0), 1.000, 793.568, 157438.000, 396.784),
    ("beale", (3.0, 0.5), 162.473, 49.281, 14.766, 48.980),
    ("booth", (1.0, 3.0), 9.000, 20.000, 36.000, 18.000),
    ("three_hump_camel", (0.0, 0.0), 2.784, 6.000, 7.000, 4.414),
    ("himmelblau", (3.0, 2.0), 3.200, 108.000, 2116.000, 82.284),
    ("himmelblau", (-2.805118, 3.131312), 1.242, 145.390, 5222.890, 80.550),
    ("himmelblau", (-3.77931, -3.283186), 1.892, 204.500, 9460.560, 133.786),
    ("himmelblau", (3.584428, -1.848126), 3.674, 134.110, 3024.540, 105.419),
)

#: Absolute tolerance for printed magnitudes below this threshold ...
ABS_THRESHOLD = 100.0
ABS_TOL = 1e-3
#: ... and relative tolerance at or above it.
REL_TOL = 5e-4


@dataclass(frozen=True)
class CellMismatch:
    """A reference-table cell the recomputed statistics failed to match."""

    function: str
    minimum: Tuple[float, float]
    column: str
    expected: float
    actual: float
    tolerance: float


def _cell_tolerance(printed: float) -> float:
    if abs(printed) < ABS_THRESHOLD:
        return ABS_TOL
    return REL_TOL * abs(printed)


def check_against_reference(rows: Sequence[MinimumRow] | None = None) -> List[CellMismatch]:
    """Compare the recomputed table against the frozen reference, cell by cell.

    Returns the list of mismatching cells; an empty list means every cell
    agrees within the printed-value tolerance. Rows are matched by position
    (the table and the reference share registry order).
    """
    if rows is None:
        rows = minima_table()
    if len(rows) != len(REFERENCE_TABLE):
        raise ValueError(
            f"table has {len(rows)} rows but the reference has {len(REFERENCE_TABLE)}"
        )
    mismatches: List[CellMismatch] = []
    for row, ref in zip(rows, REFERENCE_TABLE):
        name, seed, *cells = ref
        if row.function != name:
            raise ValueError(f"row order mismatch: {row.function} vs {name}")
        actuals = (
            row.stats.condition_number,
            row.stats.trace,
            row.stats.determinant,
            row.stats.max_eigenvalue,
        )
        columns = ("condition_number", "hessian_trace", "hessian_determinant", "max_eigenvalue")
        for column, expected, actual in zip(columns, cells, actuals):
            tol = _cell_tolerance(expected)
            if not math.isfinite(actual) or abs(actual - expected) > tol:
                mismatches.append(
                    CellMismatch(name, seed, column, expected, actual, tol)
                )
    return mismatches
