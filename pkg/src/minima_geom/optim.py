"""Optimizers: SGD with momentum, Adam, and the SAM two-step wrapper.

All optimizers update a flat parameter array in place and work on either a
single vector of shape (P,) or a stack of shape (R, P) updated in lockstep
(per-run state rows). The SAM wrapper needs to re-evaluate the gradient at
the perturbed point, so its step takes a ``value_and_grad`` callable rather
than a precomputed gradient; norms are taken per run along the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = ["OptimizerSpec", "SgdMomentum", "Adam", "SamOptimizer", "make_optimizer"]

#: Gradient norms below this skip the SAM perturbation (epsilon = 0).
SAM_MIN_GRAD_NORM = 1e-12


@dataclass
class OptimizerSpec:
    """Resolved optimizer configuration.

    ``sam_rho`` of None means no SAM wrapper; when set it must be positive.
    """

    kind: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sam_rho: Optional[float] = None
    weight_decay: float = 0.0

    def validate(self) -> "OptimizerSpec":
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.sam_rho is not None and not self.sam_rho > 0:
            raise ValueError("sam_rho must be > 0 when set")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        return self


class SgdMomentum:
    """theta' = theta - lr * v with v' = momentum * v + grad."""

    def __init__(self, learning_rate: float, momentum: float = 0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity: Optional[np.ndarray] = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.velocity is None:
            self.velocity = np.zeros_like(theta)
        v = self.velocity
        v *= self.momentum
        v += grad
        theta -= self.learning_rate * v
        return theta

    def select(self, keep: np.ndarray) -> None:
        if self.velocity is not None:
            self.velocity = self.velocity[keep]


class Adam:
    """Bias-corrected Adam: theta' = theta - lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        m, v = self.m, self.v
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * (grad * grad)
        mhat = m / (1.0 - self.beta1 ** self.t)
        vhat = v / (1.0 - self.beta2 ** self.t)
        theta -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)
        return theta

    def select(self, keep: np.ndarray) -> None:
        if self.m is not None:
            self.m = self.m[keep]
            self.v = self.v[keep]


class SamOptimizer:
    """Two-step sharpness-aware wrapper around an inner optimizer.

    One step: g = grad L(theta); epsilon = rho * g / ||g||_2; the inner
    optimizer is applied at theta using grad L(theta + epsilon). Rows whose
    gradient norm falls below ``min_grad_norm`` skip the perturbation and
    use g directly. ``at_theta`` lets callers pass an already-computed
    (loss, grad) pair at theta so the first evaluation is not repeated.
    """

    def __init__(self, inner, rho: float = 0.05, min_grad_norm: float = SAM_MIN_GRAD_NORM):
        if not rho > 0:
            raise ValueError("rho must be > 0")
        self.inner = inner
        self.rho = rho
        self.min_grad_norm = min_grad_norm

    def step(self, theta: np.ndarray,
             value_and_grad: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
             at_theta: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        loss, g = at_theta if at_theta is not None else value_and_grad(theta)
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
        ok = norms >= self.min_grad_norm
        if np.any(ok):
            scale = np.where(ok, self.rho / np.where(ok, norms, 1.0), 0.0)
            _, g_adv = value_and_grad(theta + scale * g)
            g = np.where(ok, g_adv, g)
        self.inner.step(theta, g)
        return loss

    def select(self, keep: np.ndarray) -> None:
        self.inner.select(keep)


def make_optimizer(spec: OptimizerSpec):
    """Build the inner optimizer for a validated spec (SAM wrapping is the
    trainer's concern, since it needs the loss closure)."""
    spec.validate()
    if spec.kind == "adam":
        return Adam(spec.learning_rate, spec.beta1, spec.beta2, spec.eps)
    return SgdMomentum(spec.learning_rate, spec.momentum)
