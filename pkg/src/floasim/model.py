"""One-hidden-layer ReLU MLP with softmax cross-entropy and hand-written backprop.

Parameters live in one flat float64 vector laid out as ``[W1, b1, W2, b2]``
with ``W1`` of shape (hidden, input) and ``W2`` of shape (output, hidden),
both row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, StructuralError, UsageError
from .summation import kahan_sum


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise StructuralError(f"{name} must be >= 1")

    @property
    def num_params(self) -> int:
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        return i * h + h + h * o + o

    def unpack(self, w: np.ndarray):
        """Return ``(W1, b1, W2, b2)`` as views into ``w``."""
        check_params(self, w)
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        a = i * h
        b = a + h
        c = b + h * o
        return w[:a].reshape(h, i), w[a:b], w[b:c].reshape(o, h), w[c:]


def check_params(arch: ModelArch, w: np.ndarray) -> None:
    if w.ndim != 1 or w.shape[0] != arch.num_params:
        raise StructuralError(f"parameter vector has shape {w.shape}, expected ({arch.num_params},)")


def _check_batch(arch: ModelArch, X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise StructuralError(f"features have shape {X.shape}, expected (n, {arch.input_dim})")
    if y.shape != (X.shape[0],):
        raise StructuralError(f"labels have shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] == 0:
        raise UsageError("batch must be non-empty")
    if y.min() < 0 or y.max() >= arch.output_dim:
        raise StructuralError("label out of range")


def init_params(arch: ModelArch, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    w = np.zeros(arch.num_params)
    W1, _, W2, _ = arch.unpack(w)
    for W in (W1, W2):
        fan_out, fan_in = W.shape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return w


def logits(arch: ModelArch, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    W1, b1, W2, b2 = arch.unpack(w)
    hidden = np.maximum(X @ W1.T + b1, 0.0)
    return hidden @ W2.T + b2


def per_sample_losses(arch: ModelArch, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_batch(arch, X, y)
    z = logits(arch, w, X)
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    # clamp the rounding-level negatives that appear when p_y == 1
    return np.maximum(lse - z[np.arange(len(y)), y], 0.0)


def forward_loss(arch: ModelArch, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy over the batch."""
    losses = per_sample_losses(arch, w, X, y)
    return math.fsum(losses) / len(losses)


def local_gradient(arch: ModelArch, w: np.ndarray, x: np.ndarray, label: int) -> np.ndarray:
    """Exact gradient of the single-sample cross-entropy.

    The ReLU derivative at exactly zero is taken as 0.
    """
    W1, b1, W2, b2 = arch.unpack(w)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arch.input_dim,):
        raise StructuralError(f"sample has shape {x.shape}, expected ({arch.input_dim},)")
    if not 0 <= label < arch.output_dim:
        raise StructuralError(f"label {label} out of range")

    z1 = W1 @ x + b1
    a1 = np.maximum(z1, 0.0)
    z2 = W2 @ a1 + b2
    p = np.exp(z2 - z2.max())
    p /= p.sum()
    d2 = p
    d2[label] -= 1.0
    d1 = (W2.T @ d2) * (z1 > 0.0)

    g = np.empty(arch.num_params)
    gW1, gb1, gW2, gb2 = arch.unpack(g)
    np.outer(d1, x, out=gW1)
    gb1[:] = d1
    np.outer(d2, a1, out=gW2)
    gb2[:] = d2
    return g


def minibatch_gradient(arch: ModelArch, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean of per-sample gradients, reduced in sample order with compensation."""
    _check_batch(arch, X, y)
    if len(y) == 1:
        return local_gradient(arch, w, X[0], int(y[0]))
    total = kahan_sum(local_gradient(arch, w, X[k], int(y[k])) for k in range(len(y)))
    return total / len(y)


def model_update(w: np.ndarray, g: np.ndarray, alpha: float) -> np.ndarray:
    """Return ``w - alpha * g``; non-finite gradients abort the update."""
    if not alpha > 0:
        raise UsageError(f"learning rate must be positive, got {alpha}")
    if g.shape != w.shape:
        raise StructuralError(f"gradient shape {g.shape} != parameter shape {w.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite entries in aggregated gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        out = w - alpha * g
    if not np.all(np.isfinite(out)):
        raise NumericError("model update overflowed")
    return out


def finite_diff_gradient(f: Callable[[np.ndarray], float], w: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function ``f`` at ``w``."""
    if not step > 0:
        raise UsageError("step must be positive")
    w = np.array(w, dtype=np.float64, copy=True)
    g = np.empty_like(w)
    for d in range(w.shape[0]):
        orig = w[d]
        w[d] = orig + step
        fp = f(w)
        w[d] = orig - step
        fm = f(w)
        w[d] = orig
        g[d] = (fp - fm) / (2.0 * step)
    return g


def sample_loss_fn(arch: ModelArch, x: np.ndarray, label: int) -> Callable[[np.ndarray], float]:
    """Single-sample loss as a function of the parameters, for finite differences."""
    x = np.asarray(x, dtype=np.float64)
    W_sizes = (arch.input_dim * arch.hidden_dim, arch.hidden_dim, arch.hidden_dim * arch.output_dim)

    def f(w):
        a = W_sizes[0]
        b = a + W_sizes[1]
        c = b + W_sizes[2]
        z1 = w[:a].reshape(arch.hidden_dim, arch.input_dim) @ x + w[a:b]
        z2 = w[b:c].reshape(arch.output_dim, arch.hidden_dim) @ np.maximum(z1, 0.0) + w[c:]
        m = z2.max()
        return float(m + math.log(np.exp(z2 - m).sum()) - z2[label])

    return f


def evaluate(arch: ModelArch, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy on a labelled set."""
    _check_batch(arch, X, y)
    z = logits(arch, w, X)
    acc = float(np.mean(np.argmax(z, axis=1) == y))
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    losses = np.maximum(lse - z[np.arange(len(y)), y], 0.0)
    return acc, math.fsum(losses) / len(losses)
