"""Minimal dense-tensor reverse-mode automatic differentiation, with the
Adam optimizer, parameter EMA, and a binary checkpoint format.

Tensors wrap 64-bit numpy arrays of up to 4 axes. Every op records its
parents and a backward closure when gradients are requested; backward()
walks the recorded graph once in reverse topological order and accumulates
gradients across fan-out. Reductions are plain sequential numpy, so forward
results are bit-identical across runs.

Set SPINSIGHT_DEBUG=1 to assert finiteness after every op.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DataError, SpinsightError

DEBUG_FINITE = os.environ.get("SPINSIGHT_DEBUG", "") == "1"


class ShapeMismatch(SpinsightError):
    pass


class GraphConsumed(SpinsightError):
    """backward() called twice on the same recorded graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(),
                 _backward_fn=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeMismatch(f"tensors support up to 4 axes, got {arr.ndim}")
        if DEBUG_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite tensor value")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents,
                  _backward_fn=backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ------------------------------------------------------------ arithmetic ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner axes differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


# ------------------------------------------------------------ structural ops

def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bwd)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, stop)
    slicer = tuple(slicer)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[slicer] = g
        return (full,)

    return _make(a.data[slicer], (a,), bwd)


# ------------------------------------------------------------ nonlinear ops

def softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def bwd(g):
        d = a.shape[-1]
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d)
        return dx, dgain, dbias

    return _make(out, (a, gain, bias), bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    half_1pt = 0.5 * (1.0 + t)
    out = x * half_1pt

    def bwd(g):
        du = _GELU_C * (1.0 + (3 * 0.044715) * x2)
        dx = half_1pt + x * ((0.5 - 0.5 * t * t) * du)
        return (g * dx,)

    return _make(out, (a,), bwd)


def rope(a: Tensor, positions: np.ndarray, base: float = 10000.0) -> Tensor:
    """Rotate consecutive coordinate pairs of the last axis by
    position-dependent angles (rotary positional encoding).

    positions has shape (T,) matching axis -2; pair k of a D-wide last axis
    turns by positions * base**(-2k/D).
    """
    D = a.shape[-1]
    if D % 2 != 0:
        raise ShapeMismatch(f"rope needs an even last axis, got {D}")
    T = a.shape[-2]
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (T,):
        raise ShapeMismatch(f"positions shape {positions.shape} != ({T},)")
    freqs = base ** (-np.arange(D // 2, dtype=np.float64) * 2.0 / D)
    theta = positions[:, None] * freqs[None, :]          # (T, D/2)
    cos, sin = np.cos(theta), np.sin(theta)

    even, odd = a.data[..., 0::2], a.data[..., 1::2]
    out = np.empty_like(a.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def bwd(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return _make(out, (a,), bwd)


# -------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _make(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape).copy(),)

    return _make(out, (a,), bwd)


def squared_error(a: Tensor, b: Tensor, weight: np.ndarray | None = None) -> Tensor:
    """sum(weight * (a - b)**2) reduced to a scalar; weight is a constant."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"squared_error shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    w = 1.0 if weight is None else np.asarray(weight, dtype=np.float64)
    out = np.sum(w * diff * diff)

    def bwd(g):
        base = 2.0 * g * w * diff
        return base, -base

    return _make(out, (a, b), bwd)


# ----------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every tensor that
    requires them. A recorded graph supports exactly one backward pass."""
    if loss.data.size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumed("backward() already ran on this graph")
    if not loss.requires_grad:
        raise SpinsightError("loss does not depend on any parameter")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._backward_fn is None:
            if g is not None and node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if DEBUG_FINITE and not np.all(np.isfinite(pg)):
                raise FloatingPointError("non-finite gradient")
            if p._backward_fn is None and not p._parents:
                p.grad = pg if p.grad is None else p.grad + pg
            else:
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
    loss._consumed = True


# ---------------------------------------------------------------- optimizers

class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"gradient/parameter shape mismatch for {k}")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / (1.0 - self.beta1 ** t)
            v_hat = self.v[k] / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict[str, np.ndarray], step: int) -> None:
        self.step_count = step
        for k in self.params:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()


class Ema:
    """Exponential moving average of parameters: shadow <- d*shadow + (1-d)*p."""

    def __init__(self, params: dict[str, Tensor], decay: float = 0.999):
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict[str, Tensor]) -> None:
        d = self.decay
        for k, p in params.items():
            if self.shadow[k].shape != p.data.shape:
                raise ShapeMismatch(f"EMA/parameter shape mismatch for {k}")
            self.shadow[k] = d * self.shadow[k] + (1.0 - d) * p.data


# ---------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"SPINCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    config: dict[str, str], step: int) -> None:
    """Write named float64 tensors with a config echo and step counter.

    Byte layout: 8-byte magic, uint32 LE format version, uint32 LE header
    length, UTF-8 JSON header {step, config, tensors: [{name, shape}...]},
    then each tensor's row-major float64 little-endian values in header
    order.
    """
    header = {
        "step": int(step),
        "config": {str(k): str(v) for k, v in config.items()},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str], int]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version, = struct.unpack("<I", raw[8:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    hlen, = struct.unpack("<I", raw[12:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataError(f"{path} truncated at tensor {entry['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        offset = end
    return tensors, header["config"], int(header["step"])
