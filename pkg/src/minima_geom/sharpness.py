"""Three sharpness measures of a trained network on a dataset.

* ``sam_sharpness``: mean of |L(theta + delta_k) - L(theta)| / rho over K
  perturbations delta_k drawn uniformly on the sphere of radius rho in full
  parameter space (standard normal draw, normalized, scaled by rho).
* ``fisher_rao_norm``: (L+1) * sqrt(max(m, 0)) with
  m = (1/N) sum_i <grad_theta l_i, theta>, which by linearity of the
  gradient equals <grad of the mean loss, theta>, so one full-batch
  backward pass computes it. A negative m is clamped to zero and flagged.
  The expression is evaluated for whichever loss the caller selects; with
  MSE losses it is the same formula applied to per-example squared errors
  (reports label the loss kind).
* ``relative_flatness``: kappa = sum_{s,s'} <w_s, w_s'> * Tr(H_{s,s'}),
  where w_s are the final affine layer's weight rows and H_{s,s'} is the
  (row s, row s') block of the Hessian of the mean loss with respect to
  those weights (features and biases held fixed). Blocks are assembled
  from exact Hessian-vector products against coordinate directions.

Each perturbation k of ``sam_sharpness`` uses its own child generator
``default_rng([seed, k])``, so the result does not depend on evaluation
order and is reproducible per (seed, k) pair. Metrics always evaluate the
plain data loss (no weight-decay term).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .data import RegressionDataset
from .hashing import blob_sha1
from .mlp import MLPParams, _loss_of_kind, forward_with_cache, loss_and_gradient

__all__ = [
    "SharpnessReport",
    "sam_sharpness",
    "sam_sharpness_closure",
    "fisher_rao_norm",
    "fisher_rao_from_gradient",
    "relative_flatness",
    "sharpness_report",
    "params_hash",
]

DEFAULT_RHO = 0.005
DEFAULT_K = 100


def sphere_perturbation(count: int, rho: float, seed: int, k: int) -> np.ndarray:
    """The k-th perturbation: a normalized Gaussian draw scaled to radius rho."""
    rng = np.random.default_rng([seed, k])
    z = rng.standard_normal(count)
    norm = float(np.linalg.norm(z))
    while norm == 0.0:  # probability zero; redraw keeps the contract total
        z = rng.standard_normal(count)
        norm = float(np.linalg.norm(z))
    # Normalize first, then scale: a 1-D draw lands exactly on +-rho.
    return rho * (z / norm)


def sam_sharpness_closure(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray,
                          rho: float = DEFAULT_RHO, k: int = DEFAULT_K,
                          seed: int = 0) -> float:
    """S = (1/K) sum_k |loss(theta + delta_k) - loss(theta)| / rho."""
    if not rho > 0:
        raise ValueError("rho must be > 0")
    if k < 1:
        raise ValueError("K must be >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    base = float(loss_fn(theta))
    terms = []
    for j in range(k):
        delta = sphere_perturbation(theta.shape[0], rho, seed, j)
        terms.append(abs(float(loss_fn(theta + delta)) - base) / rho)
    return math.fsum(terms) / k


def _data_loss_closure(params: MLPParams, dataset: RegressionDataset, loss: str):
    # Per-example losses are reduced with math.fsum (exactly rounded), so the
    # closure value is bitwise invariant under permuting the dataset rows.
    X, y = dataset.inputs, dataset.targets
    widths = params.widths
    if loss == "mse":
        targets = np.asarray(y)
        if targets.ndim == 1:
            targets = targets[:, None]

        def closure(flat: np.ndarray) -> float:
            pred, _ = forward_with_cache(flat, widths, X)
            resid = pred - targets
            per_example = (resid * resid).sum(axis=-1)
            return math.fsum(per_example) / per_example.shape[-1]

    elif loss == "cross_entropy":
        labels = np.asarray(y).astype(np.int64)

        def closure(flat: np.ndarray) -> float:
            logits, _ = forward_with_cache(flat, widths, X)
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=-1))
            picked = np.take_along_axis(shifted, labels[:, None], axis=-1)[:, 0]
            per_example = logz - picked
            return math.fsum(per_example) / per_example.shape[-1]

    else:
        _loss_of_kind(loss)  # raises the standard unknown-kind error
        raise AssertionError("unreachable")
    return closure


def sam_sharpness(params: MLPParams, dataset: RegressionDataset, loss: str = "mse",
                  rho: float = DEFAULT_RHO, k: int = DEFAULT_K, seed: int = 0) -> float:
    """SAM-sharpness of a network's full-batch data loss."""
    closure = _data_loss_closure(params, dataset, loss)
    return sam_sharpness_closure(closure, params.flat.astype(np.float64), rho, k, seed)


def fisher_rao_from_gradient(theta: np.ndarray, grad: np.ndarray,
                             n_layers: int) -> Tuple[float, bool]:
    """(L+1) * sqrt(max(m, 0)) with m = <grad, theta>; returns (value, clamped)."""
    m = float(np.dot(np.asarray(grad, dtype=np.float64),
                     np.asarray(theta, dtype=np.float64)))
    clamped = m < 0.0
    return (n_layers + 1) * math.sqrt(max(m, 0.0)), clamped


def fisher_rao_norm(params: MLPParams, dataset: RegressionDataset, loss: str = "mse",
                    n_layers: Optional[int] = None) -> float:
    """Fisher-Rao norm of the network on the dataset's mean loss."""
    value, _ = _fisher_rao(params, dataset, loss, n_layers)
    return value


def _fisher_rao(params: MLPParams, dataset: RegressionDataset, loss: str,
                n_layers: Optional[int]) -> Tuple[float, bool]:
    if n_layers is None:
        n_layers = params.n_affine_layers
    flat = params.flat.astype(np.float64)
    _, grad = loss_and_gradient(flat, params.widths, dataset.inputs, dataset.targets,
                                loss=loss, weight_decay=0.0)
    return fisher_rao_from_gradient(flat, grad, n_layers)


def relative_flatness(params: MLPParams, dataset: RegressionDataset,
                      loss: str = "mse") -> float:
    """kappa over the final affine layer's weight rows (see module docstring)."""
    flat = params.flat.astype(np.float64)
    work = MLPParams(params.widths, flat)
    pred, acts = forward_with_cache(flat, work.widths, dataset.inputs)
    phi = acts[-2]  # penultimate activations: the features the last layer sees
    W_last, _ = work.layers[-1]
    c, h = W_last.shape
    n = phi.shape[0]

    if loss == "mse":
        targets = dataset.targets
        if targets.ndim == pred.ndim - 1:
            targets = targets[..., None]
        if targets.shape[-1] != c:
            raise ValueError("targets do not match the network's output width")

        def hvp(V: np.ndarray) -> np.ndarray:
            # L(W) = (1/N) sum_i ||W phi_i + b - t_i||^2 has exact HVP
            # (2/N) * sum_i phi_i (phi_i . v_s); independent of W.
            A = np.einsum("bch,nh->bnc", V, phi)
            return (2.0 / n) * np.einsum("bnc,nh->bch", A, phi)
    elif loss == "cross_entropy":
        shifted = pred - pred.max(axis=-1, keepdims=True)
        P = np.exp(shifted)
        P /= P.sum(axis=-1, keepdims=True)

        def hvp(V: np.ndarray) -> np.ndarray:
            # Per-sample d^2 l / dz^2 = diag(p) - p p^T composed with features.
            A = np.einsum("bch,nh->bnc", V, phi)
            PA = P[None, :, :] * A
            M = PA - P[None, :, :] * PA.sum(axis=-1, keepdims=True)
            return (1.0 / n) * np.einsum("bnc,nh->bch", M, phi)
    else:
        raise ValueError(f"unsupported loss kind {loss!r}")

    # T[s, s'] = sum_j H[(s, j), (s', j)], assembled one source row at a time
    # from HVPs against the h coordinate directions of that row.
    T = np.empty((c, c))
    basis = np.zeros((h, c, h))
    for s in range(c):
        basis[...] = 0.0
        basis[np.arange(h), s, np.arange(h)] = 1.0
        R = hvp(basis)  # (h, c, h): R[j, s', j'] = H[(s', j'), (s, j)]
        T[s, :] = np.einsum("jcj->c", R)
    WWt = W_last @ W_last.T
    return float(np.sum(WWt * T))


# --- report -------------------------------------------------------------------

def params_hash(params: MLPParams) -> str:
    """Content hash of the checkpoint serialization of ``params``."""
    header = json.dumps(
        {"widths": list(params.widths), "count": int(params.count), "dtype": "<f8"},
        separators=(",", ":"),
    ).encode("utf-8")
    body = np.ascontiguousarray(params.flat, dtype="<f8").tobytes()
    return blob_sha1(header + b"\n" + body)


@dataclass(frozen=True)
class SharpnessReport:
    """The three metrics plus the exact measurement configuration."""

    sam_sharpness: float
    fisher_rao_norm: float
    fr_clamped: bool
    relative_flatness: float
    rho: float
    K: int
    L: int
    seed: int
    checkpoint_hash: str
    dataset_id: str
    loss_kind: str = "mse"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def sharpness_report(params: MLPParams, dataset: RegressionDataset, loss: str = "mse",
                     rho: float = DEFAULT_RHO, k: int = DEFAULT_K, seed: int = 0,
                     checkpoint_hash: Optional[str] = None) -> SharpnessReport:
    """Compute all three metrics with full provenance."""
    fr, clamped = _fisher_rao(params, dataset, loss, None)
    return SharpnessReport(
        sam_sharpness=sam_sharpness(params, dataset, loss, rho, k, seed),
        fisher_rao_norm=fr,
        fr_clamped=clamped,
        relative_flatness=relative_flatness(params, dataset, loss),
        rho=rho,
        K=k,
        L=params.n_affine_layers,
        seed=seed,
        checkpoint_hash=checkpoint_hash or params_hash(params),
        dataset_id=dataset.dataset_id(),
        loss_kind=loss,
    )
