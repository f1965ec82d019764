"""Dense 2-D tensors with reverse-mode autodiff, seeded init and AdamW.

Every op that sees an input with ``requires_grad`` records its parents and a
backward rule on the output. :func:`backward` orders those records
topologically and runs each rule exactly once.
"""

from __future__ import annotations

import contextlib
import os
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit

from . import _kernels
from .errors import InvalidSegmentIds, NonFiniteLoss, NonScalarLoss, ShapeMismatch

DTYPE = np.float32
DEBUG = os.environ.get("ACML_DEBUG", "") not in ("", "0")

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        # float64 only on request (gradient checks); float32 otherwise
        self.data = np.asarray(data).astype(DTYPE if dtype is None else dtype, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced")
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum(), dtype=grad.dtype)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ------------------------------------------------------------ elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    out = (x * cdf).astype(x.dtype)
    dx = (cdf + x * pdf).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * dx,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


# ------------------------------------------------------------------ linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose needs a 2-D tensor, got {a.shape}")
    return _result(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def tsum(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    return _result(out, (a,), lambda g: (np.full(a.shape, g, dtype=a.data.dtype),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = np.asarray(a.data.sum() / n, dtype=a.data.dtype)
    return _result(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),))


def sum_rows(a) -> Tensor:
    """Sum over axis 1, keeping a column vector."""
    a = as_tensor(a)
    return _result(
        a.data.sum(axis=1, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def l2_normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean norm (all-zero rows stay zero)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"l2_normalize_rows needs 2-D input, got {a.shape}")
    norm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    inv = 1.0 / np.maximum(norm, eps)
    y = a.data * inv

    def bw(g):
        return (inv * (g - y * (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), bw)


# ---------------------------------------------------------------- softmax


def _row_max(x):
    return x.max(axis=1, keepdims=True)


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"row_softmax needs 2-D input, got {a.shape}")
    e = np.exp(a.data - _row_max(a.data))
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), bw)


def row_log_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"row_log_softmax needs 2-D input, got {a.shape}")
    z = a.data - _row_max(a.data)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _result(out, (a,), bw)


def _mask_targets(a, targets, mask):
    y = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if y.shape != a.shape or m.shape != a.shape:
        raise ShapeMismatch(f"targets {y.shape} / mask {m.shape} vs predictions {a.shape}")
    # whatever sits under the mask (NaN sentinels included) is never read
    return np.where(m, y, 0.0), m, max(int(m.sum()), 1)


def masked_bce_with_logits(logits, targets, mask) -> Tensor:
    """Mean binary cross-entropy over entries where ``mask`` is true."""
    a = as_tensor(logits)
    y, m, count = _mask_targets(a, targets, mask)
    x = a.data.astype(np.float64)
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.array((per * m).sum() / count, dtype=a.data.dtype)
    return _result(out, (a,), lambda g: (g * (expit(x) - y) * m / count,))


def masked_mse(pred, targets, mask) -> Tensor:
    a = as_tensor(pred)
    y, m, count = _mask_targets(a, targets, mask)
    diff = (a.data.astype(np.float64) - y) * m
    out = np.array((diff * diff).sum() / count, dtype=a.data.dtype)
    return _result(out, (a,), lambda g: (g * 2.0 * diff / count,))


# ---------------------------------------------------------------- indexing


def _scatter_rows(g, idx, n_rows):
    order = np.argsort(idx, kind="stable")
    return _kernels.segment_sum(np.ascontiguousarray(g[order]), idx[order], n_rows)


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch(f"gather_rows: index out of range for {a.shape[0]} rows")
    return _result(a.data[idx], (a,), lambda g: (_scatter_rows(g, idx, a.shape[0]),))


embedding_lookup = gather_rows


def segment_sum(values, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``n_segments`` buckets.

    ``segment_ids`` must be sorted ascending and lie in ``[0, n_segments)``.
    """
    values = as_tensor(values)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != values.shape[0]:
        raise InvalidSegmentIds(f"need one id per row: {ids.shape} vs {values.shape}")
    if ids.size:
        if np.any(ids[1:] < ids[:-1]):
            raise InvalidSegmentIds("segment ids must be sorted ascending")
        if ids[0] < 0 or ids[-1] >= n_segments:
            raise InvalidSegmentIds(f"segment ids outside [0, {n_segments})")
    out = _kernels.segment_sum(np.ascontiguousarray(values.data), ids, n_segments)
    return _result(out, (values,), lambda g: (g[ids],))


def dropout(a, p: float, seed: int, stream: int = 0, training: bool = True) -> Tensor:
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError("dropout p must be < 1")
    keep = rng(seed, stream).random(a.shape) >= p
    factor = (keep / (1.0 - p)).astype(a.data.dtype)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


# ---------------------------------------------------------------- backward


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss("loss is not finite")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -------------------------------------------------------------- randomness


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)."""
    key = (int(stream) % (1 << 64)) << 64 | (int(seed) % (1 << 64))
    return np.random.Generator(np.random.Philox(key=key))


def seeded_init(shape, scheme="glorot", seed=0, stream=0, sigma=0.02, requires_grad=True, name=None) -> Tensor:
    """Deterministic parameter init; ``scheme`` is ``"glorot"``, ``"normal"`` or ``"zeros"``."""
    shape = tuple(int(d) for d in shape)
    if any(d <= 0 for d in shape):
        raise ValueError(f"dims must be positive: {shape}")
    g = rng(seed, stream)
    if scheme == "glorot":
        fan_in = shape[0]
        fan_out = shape[1] if len(shape) > 1 else shape[0]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        data = g.uniform(-bound, bound, size=shape)
    elif scheme == "normal":
        data = g.normal(0.0, sigma, size=shape)
    elif scheme == "zeros":
        data = np.zeros(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(data.astype(DTYPE), requires_grad=requires_grad, name=name)


# ------------------------------------------------------------------- AdamW


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState) -> None:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad for {name}: {g.shape} vs param {p.shape}")
        dt = p.data.dtype
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (dt.type(b1) * m + dt.type(1 - b1) * g).astype(dt)
        v = (dt.type(b2) * v + dt.type(1 - b2) * g * g).astype(dt)
        state.m[name], state.v[name] = m, v
        m_hat = m / dt.type(bc1)
        v_hat = v / dt.type(bc2)
        update = m_hat / (np.sqrt(v_hat) + dt.type(state.eps)) + dt.type(state.weight_decay) * p.data
        p.data = (p.data - dt.type(state.lr) * update).astype(dt)


class AdamW:
    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.001):
        self.params = params
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adamw_step(self.params, grads, self.state)
