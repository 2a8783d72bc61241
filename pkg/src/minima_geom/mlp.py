"""Small fully connected ReLU networks with hand-written reverse-mode gradients.

Parameters live in a single flat float vector per network; layer weights and
biases are reshaped views into it. The flat layout for widths
(w0, w1, ..., wL) is, per layer k in order: W_k row-major with shape
(w_{k+1}, w_k), then b_k with shape (w_{k+1},). All math below accepts either
a single parameter vector of shape (P,) with a batch of shape (N, w0), or a
stack of R networks of shape (R, P) with per-network batches (R, N, w0); the
stacked form is what the multi-run trainer uses.

Checkpoint byte layout (round-trips bit-exactly):
  line 1: UTF-8 JSON header ``{"widths": [...], "count": P, "dtype": "<f8"}``
          terminated by a single ``\\n``;
  rest:   the flat parameter vector as ``count`` little-endian float64
          values in layout order (C order, no padding).
Parameters trained in float32 are stored upcast to float64 (lossless).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .validation import NumericError

__all__ = [
    "LOSS_KINDS",
    "MLPParams",
    "TOY_WIDTHS",
    "parameter_count",
    "kaiming_init",
    "forward",
    "forward_with_cache",
    "loss_and_gradient",
    "mse_loss",
    "cross_entropy_loss",
    "save_checkpoint",
    "load_checkpoint",
]

#: Architecture of the toy regression network: three affine layers, ReLU
#: after the first two, identity output.
TOY_WIDTHS: Tuple[int, ...] = (2, 64, 64, 1)

#: Supported loss kinds; reduction is the mean over the batch in both cases.
LOSS_KINDS = ("mse", "cross_entropy")


def parameter_count(widths: Sequence[int]) -> int:
    """Total parameter count: sum over layers of out*in + out."""
    return sum(o * i + o for i, o in zip(widths[:-1], widths[1:]))


def _layer_slices(widths: Sequence[int]) -> List[Tuple[slice, slice, Tuple[int, int]]]:
    slices = []
    pos = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = slice(pos, pos + fan_out * fan_in)
        pos = w.stop
        b = slice(pos, pos + fan_out)
        pos = b.stop
        slices.append((w, b, (fan_out, fan_in)))
    return slices


@dataclass
class MLPParams:
    """A network's architecture plus its flat parameter vector."""

    widths: Tuple[int, ...]
    flat: np.ndarray

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"invalid widths {self.widths}")
        expected = parameter_count(self.widths)
        if self.flat.shape != (expected,):
            raise ValueError(
                f"flat vector has shape {self.flat.shape}, expected ({expected},)"
            )

    @property
    def count(self) -> int:
        return self.flat.shape[0]

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Weight/bias views into the flat vector, one pair per affine layer."""
        out = []
        for w, b, shape in _layer_slices(self.widths):
            out.append((self.flat[w].reshape(shape), self.flat[b]))
        return out

    @property
    def n_affine_layers(self) -> int:
        return len(self.widths) - 1

    def copy(self) -> "MLPParams":
        return MLPParams(self.widths, self.flat.copy())


def kaiming_init(widths: Sequence[int], rng: np.random.Generator,
                 dtype=np.float64) -> MLPParams:
    """Kaiming-uniform fan-in weights (bound sqrt(6/fan_in)), zero biases.

    Weights are drawn layer by layer in order, so a given generator state
    yields one reproducible parameter vector.
    """
    widths = tuple(int(w) for w in widths)
    flat = np.zeros(parameter_count(widths), dtype=dtype)
    params = MLPParams(widths, flat)
    for (W, b), fan_in in zip(params.layers, widths[:-1]):
        bound = np.sqrt(6.0 / fan_in)
        W[...] = rng.uniform(-bound, bound, size=W.shape).astype(dtype)
    return params


# --- forward / backward -----------------------------------------------------

def _views(flat: np.ndarray, widths: Sequence[int]):
    # Layer views for flat of shape (P,) or (R, P); W gets shape (..., out, in).
    lead = flat.shape[:-1]
    for w, b, shape in _layer_slices(widths):
        yield flat[..., w].reshape(*lead, *shape), flat[..., b]


def forward_with_cache(flat: np.ndarray, widths: Sequence[int], X: np.ndarray,
                       check_finite: bool = False):
    """Affine/ReLU composition returning (output, activations).

    ``activations`` lists the input followed by each layer's post-activation
    output; entry k feeds layer k. ReLU uses the subgradient convention
    relu'(0) = 0, implemented as a strict z > 0 mask on the backward pass.
    """
    n_layers = len(widths) - 1
    acts = [X]
    h = X
    for k, (W, b) in enumerate(_views(flat, widths)):
        h = h @ np.swapaxes(W, -1, -2) + b[..., None, :]
        if check_finite and not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite pre-activation at layer {k}")
        if k < n_layers - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def forward(flat: np.ndarray, widths: Sequence[int], X: np.ndarray,
            check_finite: bool = False) -> np.ndarray:
    """Network output of shape (..., N, out_width)."""
    return forward_with_cache(flat, widths, X, check_finite)[0]


def _backward(flat: np.ndarray, widths: Sequence[int], acts, dout: np.ndarray) -> np.ndarray:
    """Reverse-mode gradient of a scalar loss given d(loss)/d(output)."""
    grad = np.zeros_like(flat)
    views = list(_views(flat, widths))
    gviews = list(_views(grad, widths))
    d = dout
    for k in range(len(views) - 1, -1, -1):
        W, _ = views[k]
        gW, gb = gviews[k]
        a_prev = acts[k]
        gW[...] = np.swapaxes(d, -1, -2) @ a_prev
        gb[...] = d.sum(axis=-2)
        if k > 0:
            # acts[k] is the post-ReLU output of layer k-1; its strict
            # positivity marks where that ReLU passes gradient (relu'(0)=0).
            d = (d @ W) * (acts[k] > 0.0)
    return grad


def mse_loss(pred: np.ndarray, targets: np.ndarray):
    """Mean squared error and its gradient in the prediction.

    Per-example loss is the squared error summed over output components;
    the reduction is the mean over the batch. Targets of shape (..., N)
    are treated as single-output regression targets.
    """
    if targets.ndim < pred.ndim:
        # (..., N) single-output targets; leading run axes broadcast
        targets = targets[..., None]
    n = pred.shape[-2]
    resid = pred - targets
    loss = (resid * resid).sum(axis=(-1, -2)) / n
    dpred = (2.0 / n) * resid
    return loss, dpred


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over integer labels and its gradient in the logits."""
    labels = np.asarray(labels)
    if labels.ndim == logits.ndim - 2:
        labels = np.broadcast_to(labels, logits.shape[:-1])
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[-2]
    picked = np.take_along_axis(logp, labels[..., None].astype(np.int64), axis=-1)
    loss = -picked.sum(axis=(-1, -2)) / n
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, labels[..., None].astype(np.int64), 1.0, axis=-1)
    dlogits = (p - onehot) / n
    return loss, dlogits


def _loss_of_kind(kind: str):
    if kind == "mse":
        return mse_loss
    if kind == "cross_entropy":
        return cross_entropy_loss
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss_and_gradient(flat: np.ndarray, widths: Sequence[int], X: np.ndarray,
                      targets: np.ndarray, loss: str = "mse",
                      weight_decay: float = 0.0, check_finite: bool = True):
    """Full-batch loss and flat gradient.

    loss_total = mean per-example loss + weight_decay * 0.5 * ||theta||^2,
    with the decay term's gradient exactly weight_decay * theta. Works on a
    single network (flat (P,)) or a stack (flat (R, P)); the loss is then a
    scalar or a length-R vector.
    """
    if weight_decay < 0:
        raise ValueError("weight_decay must be >= 0")
    pred, acts = forward_with_cache(flat, widths, X, check_finite=check_finite)
    loss_fn = _loss_of_kind(loss)
    data_loss, dpred = loss_fn(pred, targets)
    grad = _backward(flat, widths, acts, dpred)
    total = data_loss
    if weight_decay != 0.0:
        total = total + weight_decay * 0.5 * (flat * flat).sum(axis=-1)
        grad += weight_decay * flat
    if check_finite and not np.all(np.isfinite(total)):
        raise NumericError("non-finite loss")
    return total, grad


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(params: MLPParams, path) -> None:
    """Write the documented header + little-endian float64 stream."""
    header = {
        "widths": list(params.widths),
        "count": int(params.count),
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params.flat, dtype="<f8").tobytes())


def load_checkpoint(path) -> MLPParams:
    """Read a checkpoint written by save_checkpoint, validating the layout."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing checkpoint header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        widths = tuple(int(w) for w in header["widths"])
        count = int(header["count"])
        dtype = header["dtype"]
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from None
    if dtype != "<f8":
        raise ValueError(f"{path}: unsupported checkpoint dtype {dtype!r}")
    if count != parameter_count(widths):
        raise ValueError(f"{path}: header count {count} does not match widths {widths}")
    body = raw[newline + 1:]
    if len(body) != 8 * count:
        raise ValueError(
            f"{path}: checkpoint body has {len(body)} bytes, expected {8 * count}"
        )
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return MLPParams(widths, flat)
