"""Catalogue of 2-D benchmark objectives with analytic derivatives.

Each objective carries a closed-form value function together with its exact
gradient and Hessian, plus the catalogued global minima. Value functions
accept scalars or numpy arrays and broadcast elementwise; gradients and
Hessians are evaluated at a single point. Catalogued minima are stored as
seed coordinates and polished to machine precision with a few Newton steps
when the registry is built, so downstream curvature tables are evaluated at
the true stationary points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from .validation import check_point

__all__ = ["ObjectiveFunction", "OBJECTIVES", "get_objective", "list_objectives"]

_TWO_PI = 2.0 * np.pi


# --- sphere ---------------------------------------------------------------

def _sphere(x, y):
    """f(x, y) = x^2 + y^2. Global minimum f(0, 0) = 0."""
    return x * x + y * y


def _sphere_grad(x, y):
    return np.array([2.0 * x, 2.0 * y])


def _sphere_hess(x, y):
    return np.array([[2.0, 0.0], [0.0, 2.0]])


# --- rosenbrock -----------------------------------------------------------

_ROSEN_A = 1.0
_ROSEN_B = 100.0


def _rosenbrock(x, y):
    """f(x, y) = (a - x)^2 + b(y - x^2)^2 with a=1, b=100. Minimum at (1, 1)."""
    return (_ROSEN_A - x) ** 2 + _ROSEN_B * (y - x * x) ** 2


def _rosenbrock_grad(x, y):
    return np.array([
        -2.0 * (_ROSEN_A - x) - 4.0 * _ROSEN_B * x * (y - x * x),
        2.0 * _ROSEN_B * (y - x * x),
    ])


def _rosenbrock_hess(x, y):
    return np.array([
        [2.0 - 4.0 * _ROSEN_B * y + 12.0 * _ROSEN_B * x * x, -4.0 * _ROSEN_B * x],
        [-4.0 * _ROSEN_B * x, 2.0 * _ROSEN_B],
    ])


# --- rastrigin ------------------------------------------------------------

_RAST_A = 10.0


def _rastrigin(x, y):
    """f(x, y) = 2a + x^2 - a cos(2 pi x) + y^2 - a cos(2 pi y), a=10. Minimum at (0, 0)."""
    return (
        2.0 * _RAST_A
        + x * x - _RAST_A * np.cos(_TWO_PI * x)
        + y * y - _RAST_A * np.cos(_TWO_PI * y)
    )


def _rastrigin_grad(x, y):
    return np.array([
        2.0 * x + _RAST_A * _TWO_PI * np.sin(_TWO_PI * x),
        2.0 * y + _RAST_A * _TWO_PI * np.sin(_TWO_PI * y),
    ])


def _rastrigin_hess(x, y):
    return np.array([
        [2.0 + _RAST_A * _TWO_PI * _TWO_PI * np.cos(_TWO_PI * x), 0.0],
        [0.0, 2.0 + _RAST_A * _TWO_PI * _TWO_PI * np.cos(_TWO_PI * y)],
    ])


# --- beale ----------------------------------------------------------------

def _beale(x, y):
    """f(x, y) = (1.5 - x + xy)^2 + (2.25 - x + xy^2)^2 + (2.625 - x + xy^3)^2.

    Global minimum f(3, 0.5) = 0.
    """
    r1 = 1.5 - x + x * y
    r2 = 2.25 - x + x * y * y
    r3 = 2.625 - x + x * y ** 3
    return r1 * r1 + r2 * r2 + r3 * r3


def _beale_grad(x, y):
    r1 = 1.5 - x + x * y
    r2 = 2.25 - x + x * y * y
    r3 = 2.625 - x + x * y ** 3
    gx = 2.0 * (r1 * (y - 1.0) + r2 * (y * y - 1.0) + r3 * (y ** 3 - 1.0))
    gy = 2.0 * (r1 * x + r2 * 2.0 * x * y + r3 * 3.0 * x * y * y)
    return np.array([gx, gy])


def _beale_hess(x, y):
    # Residual form: H = 2 sum_i (grad r_i grad r_i^T + r_i hess r_i).
    r = np.array([1.5 - x + x * y, 2.25 - x + x * y * y, 2.625 - x + x * y ** 3])
    dr = np.array([
        [y - 1.0, x],
        [y * y - 1.0, 2.0 * x * y],
        [y ** 3 - 1.0, 3.0 * x * y * y],
    ])
    d2r_xy = np.array([1.0, 2.0 * y, 3.0 * y * y])
    d2r_yy = np.array([0.0, 2.0 * x, 6.0 * x * y])
    hxx = 2.0 * np.sum(dr[:, 0] * dr[:, 0])
    hxy = 2.0 * np.sum(dr[:, 0] * dr[:, 1] + r * d2r_xy)
    hyy = 2.0 * np.sum(dr[:, 1] * dr[:, 1] + r * d2r_yy)
    return np.array([[hxx, hxy], [hxy, hyy]])


# --- booth ----------------------------------------------------------------

def _booth(x, y):
    """f(x, y) = (x + 2y - 7)^2 + (2x + y - 5)^2. Global minimum f(1, 3) = 0."""
    u = x + 2.0 * y - 7.0
    v = 2.0 * x + y - 5.0
    return u * u + v * v


def _booth_grad(x, y):
    u = x + 2.0 * y - 7.0
    v = 2.0 * x + y - 5.0
    return np.array([2.0 * u + 4.0 * v, 4.0 * u + 2.0 * v])


def _booth_hess(x, y):
    return np.array([[10.0, 8.0], [8.0, 10.0]])


# --- three-hump camel -----------------------------------------------------

def _three_hump_camel(x, y):
    """f(x, y) = 2x^2 - 1.05x^4 + x^6/6 + xy + y^2. Global minimum f(0, 0) = 0."""
    return 2.0 * x * x - 1.05 * x ** 4 + x ** 6 / 6.0 + x * y + y * y


def _three_hump_camel_grad(x, y):
    return np.array([
        4.0 * x - 4.2 * x ** 3 + x ** 5 + y,
        x + 2.0 * y,
    ])


def _three_hump_camel_hess(x, y):
    return np.array([
        [4.0 - 12.6 * x * x + 5.0 * x ** 4, 1.0],
        [1.0, 2.0],
    ])


# --- himmelblau -----------------------------------------------------------

def _himmelblau(x, y):
    """f(x, y) = (x^2 + y - 11)^2 + (x + y^2 - 7)^2.

    Four global minima with f = 0; (3, 2) is exact, the other three are
    irrational and catalogued below as seeds that get Newton-polished.
    """
    u = x * x + y - 11.0
    v = x + y * y - 7.0
    return u * u + v * v


def _himmelblau_grad(x, y):
    u = x * x + y - 11.0
    v = x + y * y - 7.0
    return np.array([4.0 * x * u + 2.0 * v, 2.0 * u + 4.0 * y * v])


def _himmelblau_hess(x, y):
    return np.array([
        [12.0 * x * x + 4.0 * y - 42.0, 4.0 * (x + y)],
        [4.0 * (x + y), 12.0 * y * y + 4.0 * x - 26.0],
    ])


# --- registry ---------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveFunction:
    """A 2-D objective with analytic value, gradient, and Hessian.

    Attributes
    ----------
    name : canonical lowercase identifier used in CSV output and the CLI.
    value : vectorized callable f(x, y); accepts scalars or arrays.
    minima_seeds : catalogued minimum coordinates as published.
    minima : the same minima polished to machine precision by Newton steps.
    """

    name: str
    value: Callable
    _grad: Callable
    _hess: Callable
    minima_seeds: Tuple[Tuple[float, float], ...]
    minima: Tuple[Tuple[float, float], ...]

    def evaluate(self, point) -> float:
        x, y = check_point(point)
        return float(self.value(x, y))

    def gradient(self, point) -> np.ndarray:
        x, y = check_point(point)
        return self._grad(x, y)

    def hessian(self, point) -> np.ndarray:
        x, y = check_point(point)
        return self._hess(x, y)


def _newton_polish(grad, hess, seed: Tuple[float, float], iters: int = 12) -> Tuple[float, float]:
    # A handful of Newton steps takes the printed coordinates to the exact
    # stationary point; seeds that are already exact stay fixed.
    p = np.asarray(seed, dtype=np.float64)
    for _ in range(iters):
        g = grad(p[0], p[1])
        H = hess(p[0], p[1])
        det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
        if abs(det) < 1e-12 or np.linalg.norm(g) < 1e-15:
            break
        step = np.array([
            (H[1, 1] * g[0] - H[0, 1] * g[1]) / det,
            (H[0, 0] * g[1] - H[1, 0] * g[0]) / det,
        ])
        p = p - step
    return (float(p[0]), float(p[1]))


def _make(name, value, grad, hess, seeds) -> ObjectiveFunction:
    polished = tuple(_newton_polish(grad, hess, s) for s in seeds)
    return ObjectiveFunction(name, value, grad, hess, tuple(seeds), polished)


OBJECTIVES: Dict[str, ObjectiveFunction] = {
    f.name: f
    for f in (
        _make("sphere", _sphere, _sphere_grad, _sphere_hess, ((0.0, 0.0),)),
        _make("rosenbrock", _rosenbrock, _rosenbrock_grad, _rosenbrock_hess, ((1.0, 1.0),)),
        _make("rastrigin", _rastrigin, _rastrigin_grad, _rastrigin_hess, ((0.0, 0.0),)),
        _make("beale", _beale, _beale_grad, _beale_hess, ((3.0, 0.5),)),
        _make("booth", _booth, _booth_grad, _booth_hess, ((1.0, 3.0),)),
        _make(
            "three_hump_camel",
            _three_hump_camel,
            _three_hump_camel_grad,
            _three_hump_camel_hess,
            ((0.0, 0.0),),
        ),
        _make(
            "himmelblau",
            _himmelblau,
            _himmelblau_grad,
            _himmelblau_hess,
            (
                (3.0, 2.0),
                (-2.805118, 3.131312),
                (-3.77931, -3.283186),
                (3.584428, -1.848126),
            ),
        ),
    )
}


def get_objective(name: str) -> ObjectiveFunction:
    """Look up an objective by canonical name."""
    try:
        return OBJECTIVES[name]
    except KeyError:
        known = ", ".join(OBJECTIVES)
        raise ValueError(f"unknown objective {name!r}; known: {known}") from None


def list_objectives() -> Tuple[str, ...]:
    return tuple(OBJECTIVES)
