"""Full-batch training engine, vectorized over a stack of runs.

A ``RunBatch`` trains R networks in lockstep, one full-batch gradient step
per epoch, each run owning its dataset while sharing the epoch counter.
Stacking the runs turns the per-epoch work into batched matmuls, which is
what makes the bigger studies tractable on a few cores. Runs can be
extracted (for measurement at a crossing epoch) or retired from the batch
without disturbing the others; every active run always has the same step
count, so optimizer state stays consistent under retirement.

The recorded train loss is the plain data loss (no weight-decay term); the
optimizer minimizes data loss + weight_decay * 0.5 * ||theta||^2.
"""
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .mlp import MLPParams, _backward, _loss_of_kind, forward_with_cache
from .optim import OptimizerSpec, SamOptimizer, make_optimizer

__all__ = ["RunBatch"]


class RunBatch:
    """R networks trained full-batch in lockstep on per-run datasets."""

    def __init__(self, widths, init_flat: np.ndarray, X: np.ndarray, y: np.ndarray,
                 spec: OptimizerSpec, loss: str = "mse", dtype=np.float32):
        spec.validate()
        self.widths = tuple(widths)
        self.loss_kind = loss
        self._loss_fn = _loss_of_kind(loss)
        self.spec = spec
        X = np.asarray(X, dtype=dtype)
        if X.ndim != 3:
            raise ValueError(f"X must have shape (R, N, in), got {X.shape}")
        r = X.shape[0]
        init_flat = np.asarray(init_flat, dtype=dtype)
        if init_flat.ndim == 1:
            params = np.repeat(init_flat[None, :], r, axis=0)
        elif init_flat.shape[0] == r:
            params = init_flat.copy()
        else:
            raise ValueError("init_flat must be (P,) or (R, P)")
        self.params = params
        self.X = X
        if loss == "mse":
            self.y = np.asarray(y, dtype=dtype)
        else:
            self.y = np.asarray(y)
        self.run_ids = np.arange(r)
        self.inner = make_optimizer(spec)
        self.sam = SamOptimizer(self.inner, spec.sam_rho) if spec.sam_rho else None
        self._cache = None

    @property
    def n_active(self) -> int:
        return self.params.shape[0]

    def evaluate(self) -> np.ndarray:
        """Current per-run data loss (float64, shape (n_active,)).

        Caches the forward activations so the following ``step`` reuses them.
        """
        pred, acts = forward_with_cache(self.params, self.widths, self.X)
        data_loss, dpred = self._loss_fn(pred, self.y)
        self._cache = (acts, dpred, data_loss)
        return np.asarray(data_loss, dtype=np.float64)

    def _value_and_grad(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pred, acts = forward_with_cache(theta, self.widths, self.X)
        data_loss, dpred = self._loss_fn(pred, self.y)
        grad = _backward(theta, self.widths, acts, dpred)
        total = data_loss
        wd = self.spec.weight_decay
        if wd:
            total = total + wd * 0.5 * (theta * theta).sum(axis=-1)
            grad += wd * theta
        return total, grad

    def step(self) -> None:
        """One optimizer step per active run, reusing the evaluate() cache."""
        if self._cache is None:
            self.evaluate()
        acts, dpred, data_loss = self._cache
        self._cache = None
        grad = _backward(self.params, self.widths, acts, dpred)
        wd = self.spec.weight_decay
        total = data_loss
        if wd:
            total = total + wd * 0.5 * (self.params * self.params).sum(axis=-1)
            grad += wd * self.params
        if self.sam is not None:
            self.sam.step(self.params, self._value_and_grad, at_theta=(total, grad))
        else:
            self.inner.step(self.params, grad)

    def extract(self, position: int) -> MLPParams:
        """Float64 snapshot of the run currently at batch position ``position``."""
        return MLPParams(self.widths, self.params[position].astype(np.float64))

    def retire(self, keep: np.ndarray) -> None:
        """Drop runs where ``keep`` is False; positions compact, ids persist."""
        keep = np.asarray(keep, dtype=bool)
        if keep.all():
            return
        self.params = self.params[keep].copy()
        self.X = self.X[keep]
        self.y = self.y[keep]
        self.run_ids = self.run_ids[keep]
        self.inner.select(keep)
        self._cache = None
