"""Minimal dense tensor arithmetic with reverse-mode gradients.

Tensors are float64 numpy arrays of rank <= 4. Operations optionally record
backward rules on a Tape; replaying the tape in reverse accumulates gradients
into every tensor reachable from the loss. Just enough machinery to train the
two classifier heads, nothing more: no broadcasting zoo, no higher-order
derivatives, no GPU.

Summation order is whatever numpy's einsum/matmul produce for a fixed shape,
which is deterministic run to run on the same machine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError, SchemaError, TrainingDivergedError

CHECKPOINT_FORMAT = "mimebench-params-v1"


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 4:
        raise ValueError(f"rank {arr.ndim} tensor not supported (max 4)")
    if not np.all(np.isfinite(arr)):
        raise NumericalError("non-finite values in tensor")
    return arr


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of backward rules for one forward pass.

    Confined to a single thread; cleared between training steps via a fresh
    instance (or reset()).
    """

    def __init__(self):
        self._backward_fns = []

    def record(self, fn):
        self._backward_fns.append(fn)

    def backward(self, loss: Tensor):
        if loss.data.shape != ():
            raise ValueError("backward() expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._backward_fns):
            fn()

    def reset(self):
        self._backward_fns.clear()


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        def backward():
            a.accumulate_grad(out.grad @ b.data.T)
            b.accumulate_grad(a.data.T @ out.grad)
        tape.record(backward)
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        mask = x.data > 0
        def backward():
            x.accumulate_grad(out.grad * mask)
        tape.record(backward)
    return out


def conv1d_temporal(x: Tensor, kernel: Tensor, bias: Tensor,
                    tape: Tape | None = None) -> Tensor:
    """Valid 1-D convolution over time.

    x: [T_in, D], kernel: [K, D, C], bias: [C] -> out: [T_in-K+1, C]
    out[t, c] = bias[c] + sum_{k,d} x[t+k, d] * kernel[k, d, c]
    """
    t_in, d = x.shape
    k, kd, c = kernel.shape
    if kd != d:
        raise ValueError(f"kernel feature dim {kd} != input dim {d}")
    if bias.shape != (c,):
        raise ValueError(f"bias shape {bias.shape} != ({c},)")
    if t_in < k:
        raise SequenceTooShortError(f"sequence length {t_in} < kernel size {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)
    # windows: [T_out, D, K]
    out = Tensor(np.einsum("tdk,kdc->tc", windows, kernel.data) + bias.data)
    if tape is not None:
        t_out = t_in - k + 1
        def backward():
            kernel.accumulate_grad(
                np.einsum("tdk,tc->kdc", windows, out.grad))
            bias.accumulate_grad(out.grad.sum(axis=0))
            dx = np.zeros_like(x.data)
            for kk in range(k):
                dx[kk:kk + t_out] += out.grad @ kernel.data[kk].T
            x.accumulate_grad(dx)
        tape.record(backward)
    return out


def graph_conv(x: Tensor, adjacency: np.ndarray, weight: Tensor,
               tape: Tape | None = None) -> Tensor:
    """Per-time-step spatial step: out[t] = adjacency @ x[t] @ weight.

    x: [T, J, C_in], adjacency: constant [J, J], weight: [C_in, H]
    """
    t, j, c_in = x.shape
    if adjacency.shape != (j, j):
        raise ValueError(f"adjacency shape {adjacency.shape} != ({j},{j})")
    if weight.shape[0] != c_in:
        raise ValueError(f"weight rows {weight.shape[0]} != input channels {c_in}")
    ax = np.einsum("ij,tjc->tic", adjacency, x.data)
    out = Tensor(np.einsum("tic,ch->tih", ax, weight.data))
    if tape is not None:
        def backward():
            weight.accumulate_grad(np.einsum("tic,tih->ch", ax, out.grad))
            dax = np.einsum("tih,ch->tic", out.grad, weight.data)
            x.accumulate_grad(np.einsum("ij,tic->tjc", adjacency.T, dax))
        tape.record(backward)
    return out


def temporal_conv_joints(x: Tensor, kernel: Tensor,
                         tape: Tape | None = None) -> Tensor:
    """Valid temporal convolution shared across joints.

    x: [T, J, H], kernel: [K, H, C] -> out: [T-K+1, J, C]
    """
    t_in, j, h = x.shape
    k, kh, c = kernel.shape
    if kh != h:
        raise ValueError(f"kernel channels {kh} != input channels {h}")
    if t_in < k:
        raise SequenceTooShortError(f"sequence length {t_in} < kernel size {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)
    # windows: [T_out, J, H, K]
    out = Tensor(np.einsum("tjhk,khc->tjc", windows, kernel.data))
    if tape is not None:
        t_out = t_in - k + 1
        def backward():
            kernel.accumulate_grad(
                np.einsum("tjhk,tjc->khc", windows, out.grad))
            dx = np.zeros_like(x.data)
            for kk in range(k):
                dx[kk:kk + t_out] += np.einsum(
                    "tjc,hc->tjh", out.grad, kernel.data[kk])
            x.accumulate_grad(dx)
        tape.record(backward)
    return out


def global_mean_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over time and joints: [T, J, H] -> [H]."""
    t, j, h = x.shape
    out = Tensor(x.data.mean(axis=(0, 1)))
    if tape is not None:
        def backward():
            x.accumulate_grad(
                np.broadcast_to(out.grad / (t * j), x.data.shape).copy())
        tape.record(backward)
    return out


def linear(v: Tensor, weight: Tensor, bias: Tensor,
           tape: Tape | None = None) -> Tensor:
    """v: [H], weight: [H, C], bias: [C] -> [C]."""
    if v.data.ndim != 1 or v.shape[0] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: {v.shape} x {weight.shape}")
    out = Tensor(v.data @ weight.data + bias.data)
    if tape is not None:
        def backward():
            v.accumulate_grad(weight.data @ out.grad)
            weight.accumulate_grad(np.outer(v.data, out.grad))
            bias.accumulate_grad(out.grad)
        tape.record(backward)
    return out


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis. Pure ndarray helper."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, label: int, tape: Tape | None = None) -> Tensor:
    """-log softmax(logits)[label]; gradient is softmax(logits) - one_hot."""
    c = logits.shape[0]
    if not 0 <= label < c:
        raise IndexError(f"label {label} out of range for {c} classes")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    out = Tensor(lse - z[label])
    if tape is not None:
        def backward():
            g = softmax(logits.data)
            g[label] -= 1.0
            logits.accumulate_grad(out.grad * g)
        tape.record(backward)
    return out


def mean_scalars(losses: list[Tensor], tape: Tape | None = None) -> Tensor:
    """Arithmetic mean of scalar tensors (batch loss aggregation)."""
    if not losses:
        raise ValueError("empty loss list")
    n = len(losses)
    out = Tensor(sum(t.data for t in losses) / n)
    if tape is not None:
        def backward():
            for t in losses:
                t.accumulate_grad(out.grad / n)
        tape.record(backward)
    return out


class SequenceTooShortError(ValueError):
    """Input shorter than the temporal kernel."""


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be non-negative")


class SgdOptimizer:
    """SGD with momentum and weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], config: SgdConfig):
        self.params = params
        self.config = config
        self._velocity = {name: np.zeros_like(p.data)
                          for name, p in params.items()}

    def step(self):
        cfg = self.config
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient for '{name}'")
            g = g + cfg.weight_decay * p.data
            v = self._velocity[name]
            v *= cfg.momentum
            v += g
            p.data -= cfg.learning_rate * v
            p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_params(path, tensors: dict[str, Tensor], meta: dict | None = None):
    """Write named tensors to a versioned JSON container.

    json round-trips float64 exactly (repr is shortest-roundtrip).
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "tensors": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for name, t in tensors.items()
        },
    }
    if meta:
        payload["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(
            f"{path}: expected checkpoint format '{CHECKPOINT_FORMAT}', "
            f"found {payload.get('format')!r}")
    tensors = {}
    for name, spec in payload["tensors"].items():
        arr = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        tensors[name] = Tensor(arr)
    return tensors, payload.get("meta", {})
