"""Minimal numerical substrate: dense float64 tensors, reverse-mode autodiff
over the operator set the model needs, a GRU cell, Adam, and gradient checking.

Everything is numpy underneath. A forward op records its parents and a closure
that pushes gradients back; `Tensor.backward()` walks the implicit tape in
reverse topological order. No GPU, no general broadcasting beyond what the
listed operators need.
"""

from __future__ import annotations

import hashlib
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class NdError(Exception):
    """Base class for numerical-core failures."""


class ShapeError(NdError):
    """Operands have incompatible shapes."""


class NumericError(NdError):
    """An op produced NaN/Inf, or a contract such as a fully masked row broke."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (used by eval and grad_check)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_bwd")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        v = np.asarray(value, dtype=np.float64)
        if not math.isfinite(float(v.sum())):
            raise NumericError(f"non-finite values in tensor {name!r}")
        self.value = v
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar output. Gradients accumulate
        additively across fan-out into `.grad` of every reachable tensor."""
        if self.value.size != 1:
            raise ShapeError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    def item(self) -> float:
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    # single-pass finiteness gate: a NaN/Inf anywhere poisons the sum (values
    # large enough to overflow the sum are a numeric failure themselves)
    if not math.isfinite(float(value.sum())):
        raise NumericError("op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = ""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = parents
        out._bwd = bwd
    else:
        out._parents = ()
        out._bwd = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        v = a.value + b.value
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(v, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        v = a.value - b.value
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(v, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(-g)

    return _make(-a.value, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        v = a.value * b.value
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    av, bv = a.value, b.value

    def bwd(g):
        a._accumulate(_unbroadcast(g * bv, a.shape))
        b._accumulate(_unbroadcast(g * av, b.shape))

    return _make(v, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2D@2D, 1D@2D and 2D@1D operands."""
    an, bn = a.ndim, b.ndim
    if an == 2 and bn == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        v = a.value @ b.value

        def bwd(g):
            a._accumulate(g @ b.value.T)
            b._accumulate(a.value.T @ g)

    elif an == 1 and bn == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        v = a.value @ b.value

        def bwd(g):
            a._accumulate(g @ b.value.T)
            b._accumulate(a.value[:, None] * g)

    elif an == 2 and bn == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        v = a.value @ b.value

        def bwd(g):
            a._accumulate(g[:, None] * b.value)
            b._accumulate(a.value.T @ g)

    else:
        raise ShapeError(f"matmul: unsupported ranks {an} @ {bn}")
    return _make(v, (a, b), bwd)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    try:
        v = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[p.shape for p in parts]}") from e
    sizes = [p.shape[axis] if p.ndim else 1 for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p._accumulate(g[tuple(idx)])

    return _make(v, tuple(parts), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    v = a.value.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.shape))

    return _make(v, (a,), bwd)


def narrow(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice of a vector."""
    if a.ndim != 1:
        raise ShapeError("narrow expects a vector")
    v = a.value[start:stop]

    def bwd(g):
        ga = np.zeros_like(a.value)
        ga[start:stop] = g
        a._accumulate(ga)

    return _make(v, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    v = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(v, (a,), bwd)


def mean_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    v = a.value.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape) / n)

    return _make(v, (a,), bwd)


def max_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient routes entirely to the first argmax."""
    v = a.value.max(axis=axis, keepdims=keepdims)
    if axis is None:
        flat_idx = int(np.argmax(a.value))

        def bwd(g):
            ga = np.zeros_like(a.value)
            ga.flat[flat_idx] = float(np.asarray(g).reshape(()))
            a._accumulate(ga)

    else:
        arg = np.argmax(a.value, axis=axis)

        def bwd(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            ga = np.zeros_like(a.value)
            np.put_along_axis(ga, np.expand_dims(arg, axis), g, axis=axis)
            a._accumulate(ga)

    return _make(v, (a,), bwd)


# ---------------------------------------------------------------------------
# lookups


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row gather. `ids` is an int sequence; gradients scatter-add into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("embedding_lookup expects a flat id list")
    if table.ndim != 2:
        raise ShapeError("embedding_lookup expects a 2D table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embedding_lookup: id out of range")
    v = table.value[idx]

    def bwd(g):
        gt = np.zeros_like(table.value)
        if idx.size <= 64:
            # np.add.at is an order of magnitude slower on short id lists
            for row, grad_row in zip(idx, g):
                gt[row] += grad_row
        else:
            np.add.at(gt, idx, g)
        table._accumulate(gt)

    return _make(v, (table,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    v = 1.0 / (1.0 + np.exp(-a.value))

    def bwd(g):
        a._accumulate(g * v * (1.0 - v))

    return _make(v, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    v = np.tanh(a.value)

    def bwd(g):
        a._accumulate(g * (1.0 - v * v))

    return _make(v, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.value > 0
    v = np.where(pos, a.value, slope * a.value)

    def bwd(g):
        a._accumulate(g * np.where(pos, 1.0, slope))

    return _make(v, (a,), bwd)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    pos = a.value > 0
    ev = alpha * (np.exp(np.minimum(a.value, 0.0)) - 1.0)
    v = np.where(pos, a.value, ev)

    def bwd(g):
        a._accumulate(g * np.where(pos, 1.0, ev + alpha))

    return _make(v, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where clamping bites."""
    inside = (a.value >= lo) & (a.value <= hi)
    v = np.clip(a.value, lo, hi)

    def bwd(g):
        a._accumulate(g * inside)

    return _make(v, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if (a.value <= 0).any():
        raise NumericError("log of non-positive value")
    v = np.log(a.value)

    def bwd(g):
        a._accumulate(g / a.value)

    return _make(v, (a,), bwd)


def softmax_masked(logits: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax over the unmasked entries of each row (max-subtracted for
    stability). Masked entries get probability 0; a fully masked row is an
    error. `mask=None` means all entries participate."""
    x = logits.value
    if mask is None:
        m = np.ones(x.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=axis).all():
        raise NumericError("softmax_masked: fully masked row")
    neg = np.where(m, x, -np.inf)
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    v = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * v).sum(axis=axis, keepdims=True)
        logits._accumulate(v * (g - dot))

    return _make(v, (logits,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout. Rate 0 is the identity in both modes."""
    if rate < 0 or rate >= 1:
        raise NumericError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0 or not train:
        return a
    if rng is None:
        raise NumericError("dropout with rate > 0 requires an rng stream")
    keep = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)

    def bwd(g):
        a._accumulate(g * keep)

    return _make(a.value * keep, (a,), bwd)


# ---------------------------------------------------------------------------
# parameters, RNG streams, GRU, Adam


def stream(seed: int, name: str) -> np.random.Generator:
    """Named, order-independent RNG stream: the same (seed, name) pair always
    yields the same generator, so ablations share initializations."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, key))))


def param(seed: int, name: str, shape: tuple[int, ...], scale: float | None = None) -> Tensor:
    """Fresh learnable tensor, uniform in ±1/sqrt(fan_in) unless `scale` given."""
    rng = stream(seed, "init/" + name)
    if scale is None:
        fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
        scale = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def zeros_param(name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class GruParams:
    """One GRU cell: update gate z, reset gate r, candidate n. The z and r
    gates are stored fused (columns [0:h] are z, [h:2h] are r) so one matmul
    serves both."""

    wzr: Tensor
    uzr: Tensor
    bzr: Tensor
    wn: Tensor
    un: Tensor
    bn: Tensor
    d_h: int

    @staticmethod
    def create(seed: int, name: str, d_in: int, d_h: int) -> "GruParams":
        return GruParams(
            wzr=param(seed, f"{name}/wzr", (d_in, 2 * d_h)),
            uzr=param(seed, f"{name}/uzr", (d_h, 2 * d_h)),
            bzr=zeros_param(f"{name}/bzr", (2 * d_h,)),
            wn=param(seed, f"{name}/wn", (d_in, d_h)),
            un=param(seed, f"{name}/un", (d_h, d_h)),
            bn=zeros_param(f"{name}/bn", (d_h,)),
            d_h=d_h,
        )

    def tensors(self) -> list[Tensor]:
        return [self.wzr, self.uzr, self.bzr, self.wn, self.un, self.bn]


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """h' = (1 - z) * n + z * h with z, r sigmoid gates and tanh candidate n."""
    zr = sigmoid(matmul(x, p.wzr) + matmul(h, p.uzr) + p.bzr)
    z = narrow(zr, 0, p.d_h)
    r = narrow(zr, p.d_h, 2 * p.d_h)
    n = tanh(matmul(x, p.wn) + matmul(mul(r, h), p.un) + p.bn)
    # (1 - z) * n + z * h, written with one fewer op
    return add(n, mul(z, sub(h, n)))


@dataclass
class AdamState:
    """Bias-corrected Adam with decoupled L2 (applied directly to parameters)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-3
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Tensor], state: AdamState, grads: list[np.ndarray] | None = None) -> None:
    """One optimizer step over `params`, reading `p.grad` unless `grads` given.
    Parameters without a gradient this step are skipped (their moments too)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, p in enumerate(params):
        g = grads[i] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.value.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} vs param {p.value.shape}")
        key = p.name or f"param{i}"
        m = state.m.setdefault(key, np.zeros_like(p.value))
        v = state.v.setdefault(key, np.zeros_like(p.value))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.value -= state.lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p.value)


class GradCheckError(NdError):
    """grad_check exceeded its tolerance."""


def grad_check(fn, params: list[Tensor], tolerance: float | None = None, eps: float = 1e-4) -> float:
    """Compare analytic gradients of the scalar `fn()` against central finite
    differences over every entry of `params`. Returns the max relative error
    |analytic - numeric| / max(1e-8, |numeric|); raises if `tolerance` is set
    and exceeded."""
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.value) for p in params]
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.value.reshape(-1)
            gflat = ga.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                hi = fn().item()
                flat[j] = orig - eps
                lo = fn().item()
                flat[j] = orig
                numeric = (hi - lo) / (2.0 * eps)
                err = abs(gflat[j] - numeric) / max(1e-8, abs(numeric))
                if err > worst:
                    worst = err
    for p in params:
        p.zero_grad()
    if tolerance is not None and worst > tolerance:
        raise GradCheckError(f"max relative error {worst:.3e} > {tolerance:.1e}")
    return worst
