"""Dense float64 tensors with taped reverse-mode differentiation.

Small by design: exactly the primitives the imitator network and its loss
terms need (elementwise math, broadcasting arithmetic, reductions, gather,
conv2d, nearest upsampling) plus Adam and a flat binary checkpoint format.
Every forward op checks for NaN/Inf; silent non-finite propagation is the
worst failure mode in loss code.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_GRAD_ENABLED = True
_FINITE_CHECKS = True


class FiniteCheckError(FloatingPointError):
    """An op produced NaN or Inf."""


@contextmanager
def no_grad():
    """Skip graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def finite_checks(enabled: bool):
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


class Tensor:
    """Row-major float64 array, optionally tracked for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise FiniteCheckError(f"non-finite values produced by op '{op}'")


def _make(data: np.ndarray, op: str, parents, backward) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / broadcasting arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, "exp", (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, "sqrt", (a,), lambda g: (g * (0.5 / out_data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (g * (2.0 * a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _make(out_data, "sigmoid", (a,), lambda g: (g * out_data * (1.0 - out_data),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * mask,))


def smooth_l1(a, transition: float = 1.0) -> Tensor:
    """Elementwise 0.5*x^2 for |x| < transition else |x| - transition/2."""
    a = as_tensor(a)
    absd = np.abs(a.data)
    quad = absd < transition
    out_data = np.where(quad, 0.5 * a.data * a.data / transition,
                        absd - 0.5 * transition)
    local = np.where(quad, a.data / transition, np.sign(a.data))
    return _make(out_data, "smooth_l1", (a,), lambda g: (g * local,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def take_flat(a, indices) -> Tensor:
    """Gather by flat index; gradient scatters back by summed accumulation."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        flat = np.zeros(a.size)
        np.add.at(flat, idx, g)
        return (flat.reshape(a.shape),)

    return _make(a.data.reshape(-1)[idx], "take_flat", (a,), backward)


# ---------------------------------------------------------------------------
# conv / upsample


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride]
    return cols


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation, NCHW, zero padding; out = floor((H+2p-k)/s)+1."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects x (N,C,H,W) and weight (O,C,kh,kw)")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    if stride < 1:
        raise ValueError("conv2d stride must be >= 1")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * kh * kw)
    w2 = weight.data.reshape(o, -1)
    out = (cols2 @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        grad_w = (g2.T @ cols2).reshape(weight.shape)
        grad_cols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += grad_cols[:, :, ki, kj]
        grad_x = gxp[:, :, padding:padding + h, padding:padding + w]
        if bias is not None:
            return grad_x, grad_w, g.sum(axis=(0, 2, 3))
        return grad_x, grad_w

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, "conv2d", parents, backward)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x on the two trailing axes of an NCHW tensor."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ValueError("upsample2x expects an NCHW tensor")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, "upsample2x", (x,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into each grad-enabled leaf's ``.grad``.

    The recorded graph is released afterwards; leaf gradients sum across
    repeated calls until ``zero_grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    seen = {id(loss)}
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p._backward is not None:
                seen.add(id(p))
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if p._backward is None:  # leaf
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to params in place."""
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param shape {data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(data)
            state.m[name] = m
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        data -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
    return state


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then little-endian float64 blocks


CHECKPOINT_MAGIC = "percsim-checkpoint-v1"


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    names = list(params.keys())
    header = {
        "magic": CHECKPOINT_MAGIC,
        "params": [{"name": n, "shape": list(np.shape(params[n].data if isinstance(params[n], Tensor) else params[n]))}
                   for n in names],
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for n in names:
            arr = params[n].data if isinstance(params[n], Tensor) else np.asarray(params[n])
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (dict name -> float64 ndarray, meta dict)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a percsim checkpoint")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint at {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return params, header.get("meta", {})
