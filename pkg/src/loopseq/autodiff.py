"""Reverse-mode automatic differentiation on a recorded tape.

A `Tensor` wraps one float64 numpy array.  While a `Tape` is active,
every primitive appends a node (output, parents, vjp closure) to it;
`backward` replays the node list once in reverse, which is a reverse
topological order because nodes are appended in construction order.

Everything is real float64.  Complex quantities are (re, im) pairs in a
trailing axis of length 2, so complex arithmetic decomposes into real
primitives and every adjoint is derived exactly once, for the real case.

The only primitive with a hand-derived adjoint of any substance is
`scan_linear`; its reverse recurrence reuses the forward sweep (see
scan.scan_backward).  Every adjoint here is checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np

from . import scan as _scan
from .errors import DtypeError, NumericError, ShapeError


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_tape", "_node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            raise DtypeError(
                "complex arrays are not stored directly; use (re, im) pairs in a trailing axis"
            )
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Tensor | None = None
        self.requires_grad = requires_grad
        self._tape: "Tape | None" = None
        self._node_id: int | None = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return pow_scalar(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.nodes)


_ACTIVE: list[Tape] = []


def param(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        out._node_id = len(tape.nodes)
        tape.nodes.append(_Node(out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape its source was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise primitives ---------------------------------------------------


def add(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    return _record(
        x.data + y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.data.shape), _unbroadcast(g, y.data.shape)),
    )


def sub(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    return _record(
        x.data - y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.data.shape), _unbroadcast(-g, y.data.shape)),
    )


def mul(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    return _record(
        x.data * y.data,
        (x, y),
        lambda g: (
            _unbroadcast(g * y.data, x.data.shape),
            _unbroadcast(g * x.data, y.data.shape),
        ),
    )


def div(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    out = x.data / y.data
    return _record(
        out,
        (x, y),
        lambda g: (
            _unbroadcast(g / y.data, x.data.shape),
            _unbroadcast(-g * out / y.data, y.data.shape),
        ),
    )


def neg(x) -> Tensor:
    x = _lift(x)
    return _record(-x.data, (x,), lambda g: (-g,))


def pow_scalar(x, k: float) -> Tensor:
    x = _lift(x)
    k = float(k)
    return _record(x.data**k, (x,), lambda g: (g * k * x.data ** (k - 1),))


def exp(x) -> Tensor:
    x = _lift(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _lift(x)
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = _lift(x)
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g * (0.5 / out),))


def tanh(x) -> Tensor:
    x = _lift(x)
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _lift(x)
    # piecewise form keeps exp() off large positive arguments
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = _lift(x)
    return _record(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),))


def sin(x) -> Tensor:
    x = _lift(x)
    return _record(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x) -> Tensor:
    x = _lift(x)
    return _record(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


# --- linear algebra -----------------------------------------------------------


def matmul(x, w) -> Tensor:
    """x @ w with w strictly 2-D; leading axes of x are batch axes."""
    x, w = _lift(x), _lift(w)
    if w.ndim != 2:
        raise ShapeError(f"matmul weight must be 2-D, got shape {w.shape}")
    if x.ndim < 2:
        raise ShapeError(f"matmul input must have at least 2 dims, got shape {x.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {x.shape} @ {w.shape}")
    out = x.data @ w.data

    def vjp(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, w.shape[1])
        return gx, gw

    return _record(out, (x, w), vjp)


# --- reductions and structure --------------------------------------------------


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def mean_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    if axis is None:
        n = x.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.shape[a] for a in axis]))
    else:
        n = x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def stack(xs: Sequence, axis: int = -1) -> Tensor:
    xs = tuple(_lift(x) for x in xs)
    out = np.stack([x.data for x in xs], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _record(out, xs, vjp)


def plane(x, index: int) -> Tensor:
    """Select one component along the last axis (e.g. re/im of a pair)."""
    x = _lift(x)
    out = np.ascontiguousarray(x.data[..., index])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., index] = g
        return (full,)

    return _record(out, (x,), vjp)


# --- fused / structured primitives ---------------------------------------------


def scan_linear(a, b, kind: str = "diag") -> Tensor:
    """States of x_t = a_t * x_{t-1} + b_t (x_0 = 0) via the parallel sweep.

    `a` may omit batch/time axes; it is broadcast against `b` and the
    adjoint is summed back down to `a`'s declared shape.
    """
    a, b = _lift(a), _lift(b)
    elem = _scan.ScanElement(a.data, b.data, kind)
    states = _scan.scan_linear(elem)

    def vjp(g):
        da, db = _scan.scan_backward(elem, states, g)
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)

    return _record(states, (a, b), vjp)


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Per-example cross entropy of integer labels under softmax logits.

    logits: [..., C]; labels: integer array of shape [...].
    Computed through a shifted log-sum-exp so large logits stay finite.
    """
    logits = _lift(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
    loss = lse - picked

    def vjp(g):
        soft = np.exp(shifted - (lse - m[..., 0])[..., None])
        soft_minus_onehot = soft.copy()
        np.put_along_axis(
            soft_minus_onehot,
            labels[..., None],
            np.take_along_axis(soft, labels[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        return (soft_minus_onehot * g[..., None],)

    return _record(loss, (logits,), vjp)


# --- complex pair helpers (compositions, no new adjoints) -----------------------


def cpair(re, im) -> Tensor:
    return stack([re, im], axis=-1)


def cmul(z, w) -> Tensor:
    zr, zi = plane(z, 0), plane(z, 1)
    wr, wi = plane(w, 0), plane(w, 1)
    return cpair(zr * wr - zi * wi, zr * wi + zi * wr)


def conj(z) -> Tensor:
    return cpair(plane(z, 0), -plane(z, 1))


def cabs2(z) -> Tensor:
    zr, zi = plane(z, 0), plane(z, 1)
    return zr * zr + zi * zi


def cdiv(z, w) -> Tensor:
    zr, zi = plane(z, 0), plane(z, 1)
    wr, wi = plane(w, 0), plane(w, 1)
    d = wr * wr + wi * wi
    return cpair((zr * wr + zi * wi) / d, (zi * wr - zr * wi) / d)


# --- backward pass --------------------------------------------------------------


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Reverse sweep from a scalar loss; returns a map parameter -> gradient.

    Every requested parameter appears in the map; parameters the loss
    never touched get exact zeros.  A loss that was built with no tape
    active yields all zeros plus a warning.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else []
    tape = loss._tape
    result: dict[Tensor, Tensor] = {}
    if tape is None:
        warnings.warn("loss is detached from any tape; gradients are zero", RuntimeWarning)
        for p in params:
            p.grad = Tensor(np.zeros_like(p.data))
            result[p] = p.grad
        return result

    need: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    leaf_by_id: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = need.pop(id(node.out), None)
        if g is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p._tape is tape:
                key = id(p)
                acc = need.get(key)
                need[key] = pg if acc is None else acc + pg
            else:
                key = id(p)
                acc = leaf_grads.get(key)
                leaf_grads[key] = pg if acc is None else acc + pg
                leaf_by_id[key] = p

    for key, g in leaf_grads.items():
        p = leaf_by_id[key]
        p.grad = Tensor(g)
        result[p] = p.grad
    for p in params:
        if p not in result:
            p.grad = Tensor(np.zeros_like(p.data))
            result[p] = p.grad
    return result


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    f() must rebuild the scalar loss from the current parameter values.
    Each coordinate i is perturbed in place by +/- h and the error is
    |(f(p+h e_i) - f(p-h e_i)) / 2h - g_i| / (|g_i| + 1e-8).  When
    `sample` is given, that many coordinates per parameter are checked
    (drawn with `rng`), otherwise all of them.
    """
    params = list(params)
    with Tape():
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is non-finite at the evaluation point")
        grads = backward(loss, params)

    worst = 0.0
    for pi, p in enumerate(params):
        g = grads[p].data.reshape(-1)
        flat = p.data.reshape(-1)
        if sample is not None and sample < flat.size:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=sample, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            dn = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise NumericError(f"non-finite loss while perturbing param {pi} coordinate {i}")
            fd = (up - dn) / (2.0 * h)
            err = abs(fd - g[i]) / (abs(g[i]) + 1e-8)
            if err > worst:
                worst = err
    return worst
