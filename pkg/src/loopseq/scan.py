"""Linear-recurrence scan kernels.

A length-T linear recurrence

    x_t = a_t * x_{t-1} + b_t,    x_0 = 0,

is evaluated either step by step (`scan_sequential`, the reference route)
or with a work-efficient Blelloch up/down-sweep over the associative
combine rule

    (a2, b2) o (a1, b1) = (a2 * a1, a2 * b1 + b2),

where index 1 is the earlier element.  Both routes are kept alive on
purpose: the sequential one is the oracle the parallel one is audited
against.  The sweep uses a fixed reduction tree (pad to the next power
of two, identical slice schedule every call), so results are
reproducible bit for bit on one machine.

Three element kinds share the code path:

    "diag"   a, b: [..., T, n]          real diagonal transition
    "cdiag"  a, b: [..., T, n, 2]       complex diagonal, (re, im) pairs
    "mat2"   a: [..., T, n, 2, 2]       per-channel 2x2 transition
             b: [..., T, n, 2]

Complex values everywhere in this package are (re, im) pairs in a
trailing axis of length 2 over a float64 substrate; the combine rule
for "cdiag" is complex multiplication written out on the pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, ShapeError

KINDS = ("diag", "cdiag", "mat2")

# trailing dims after the time axis, per kind
_A_TRAIL = {"diag": 1, "cdiag": 2, "mat2": 3}
_B_TRAIL = {"diag": 1, "cdiag": 2, "mat2": 2}


def pair_mul(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Complex multiply on (re, im) pair arrays."""
    zr, zi = z[..., 0], z[..., 1]
    wr, wi = w[..., 0], w[..., 1]
    return np.stack([zr * wr - zi * wi, zr * wi + zi * wr], axis=-1)


def pair_conj(z: np.ndarray) -> np.ndarray:
    out = z.copy()
    out[..., 1] = -out[..., 1]
    return out


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ShapeError(f"unknown scan element kind {kind!r}; expected one of {KINDS}")


def _combine(kind: str, a1, b1, a2, b2):
    """Combine earlier (a1, b1) with later (a2, b2)."""
    if kind == "diag":
        return a2 * a1, a2 * b1 + b2
    if kind == "cdiag":
        return pair_mul(a2, a1), pair_mul(a2, b1) + b2
    # mat2
    a = np.einsum("...ij,...jk->...ik", a2, a1)
    b = np.einsum("...ij,...j->...i", a2, b1) + b2
    return a, b


def _apply(kind: str, a, x):
    """Apply one transition factor to a state."""
    if kind == "diag":
        return a * x
    if kind == "cdiag":
        return pair_mul(a, x)
    return np.einsum("...ij,...j->...i", a, x)


def _identity_a(kind: str, tail_shape: tuple[int, ...]) -> np.ndarray:
    if kind == "diag":
        return np.ones(tail_shape)
    if kind == "cdiag":
        out = np.zeros(tail_shape)
        out[..., 0] = 1.0
        return out
    out = np.zeros(tail_shape)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    return out


def _adjoint_a(kind: str, a: np.ndarray) -> np.ndarray:
    """Transpose of the transition factor, as used by the reverse recurrence."""
    if kind == "diag":
        return a
    if kind == "cdiag":
        return pair_conj(a)
    return np.swapaxes(a, -1, -2)


def _grad_a(kind: str, lam: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
    """Per-step gradient of the loss w.r.t. a_t given the state adjoint lam_t."""
    if kind == "diag":
        return lam * x_prev
    if kind == "cdiag":
        # d/d(lambda) of lambda*w against adjoint g is conj(w)*g, on pairs
        wr, wi = x_prev[..., 0], x_prev[..., 1]
        gr, gi = lam[..., 0], lam[..., 1]
        return np.stack([wr * gr + wi * gi, wr * gi - wi * gr], axis=-1)
    return np.einsum("...i,...j->...ij", lam, x_prev)


@dataclass
class ScanElement:
    """A batch of recurrence elements (a_t, b_t), time along the standard axis.

    a is the multiplicative factor (diagonal vector, complex pair vector,
    or per-channel 2x2 matrix), b the additive term.
    """

    a: np.ndarray
    b: np.ndarray
    kind: str = "diag"

    def __post_init__(self):
        _check_kind(self.kind)


def combine(early: ScanElement, late: ScanElement) -> ScanElement:
    """Compose two elements: the result acts like `early` then `late`."""
    if early.kind != late.kind:
        raise ShapeError(f"cannot combine kinds {early.kind!r} and {late.kind!r}")
    a, b = _combine(early.kind, early.a, early.b, late.a, late.b)
    return ScanElement(a, b, early.kind)


def _broadcast_elements(kind: str, a: np.ndarray, b: np.ndarray):
    """Validate trailing dims and broadcast a against b's batch/time shape."""
    _check_kind(kind)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    bt = _B_TRAIL[kind]
    at = _A_TRAIL[kind]
    if b.ndim < bt + 1:
        raise ShapeError(f"b must have at least {bt + 1} dims for kind {kind!r}, got shape {b.shape}")
    if kind != "diag" and b.shape[-1] != 2:
        raise ShapeError(f"kind {kind!r} expects b with trailing pair axis of 2, got shape {b.shape}")
    n = b.shape[-bt]
    T = b.shape[-(bt + 1)]
    if T == 0:
        raise EmptySequenceError("scan over zero time steps")
    if kind == "diag":
        a_tail = (n,)
    elif kind == "cdiag":
        a_tail = (n, 2)
    else:
        a_tail = (n, 2, 2)
    if a.ndim < at or a.shape[-at:] != a_tail:
        raise ShapeError(
            f"a has trailing shape {a.shape[-at:] if a.ndim >= at else a.shape}, "
            f"expected {a_tail} to match b channels (kind {kind!r})"
        )
    lead = b.shape[: -(bt + 1)]
    try:
        full_a = np.broadcast_to(a, lead + (T,) + a_tail)
    except ValueError as exc:
        raise ShapeError(f"a shape {a.shape} does not broadcast against b shape {b.shape}") from exc
    return np.ascontiguousarray(full_a), b, T


def scan_sequential(elem: ScanElement) -> np.ndarray:
    """Step-by-step evaluation of the recurrence; the reference route."""
    a, b, T = _broadcast_elements(elem.kind, elem.a, elem.b)
    ta = np.moveaxis(a, -(1 + _A_TRAIL[elem.kind]), 0)
    tb = np.moveaxis(b, -(1 + _B_TRAIL[elem.kind]), 0)
    out = np.empty_like(tb)
    x = np.zeros_like(tb[0])
    for t in range(T):
        x = _apply(elem.kind, ta[t], x) + tb[t]
        out[t] = x
    return np.moveaxis(out, 0, -(1 + _B_TRAIL[elem.kind]))


def scan_linear(elem: ScanElement) -> np.ndarray:
    """Inclusive states of the recurrence via a Blelloch up/down-sweep.

    The sweep pads to the next power of two with identity elements and
    walks a fixed slice schedule, so the floating-point reduction tree
    (and therefore the output bits) never depends on anything but T.
    """
    kind = elem.kind
    a, b, T = _broadcast_elements(kind, elem.a, elem.b)
    at_ax = -(1 + _A_TRAIL[kind])
    bt_ax = -(1 + _B_TRAIL[kind])
    wa = np.moveaxis(a, at_ax, 0)
    wb = np.moveaxis(b, bt_ax, 0)

    Tp = 1 << (T - 1).bit_length() if T > 1 else 1
    pa = np.empty((Tp,) + wa.shape[1:])
    pb = np.zeros((Tp,) + wb.shape[1:])
    pa[:T] = wa
    pb[:T] = wb
    if Tp > T:
        pa[T:] = _identity_a(kind, wa.shape[1:])
    oa = pa.copy()
    ob = pb.copy()

    # up-sweep: reduce pairs at stride 2d
    d = 1
    while d < Tp:
        hi = slice(2 * d - 1, Tp, 2 * d)
        lo = slice(d - 1, Tp - d, 2 * d)
        pa[hi], pb[hi] = _combine(kind, pa[lo], pb[lo], pa[hi], pb[hi])
        d *= 2

    # down-sweep: root becomes identity, children swap/compose
    pa[Tp - 1] = _identity_a(kind, wa.shape[1:])
    pb[Tp - 1] = 0.0
    d = Tp // 2
    while d >= 1:
        hi = slice(2 * d - 1, Tp, 2 * d)
        lo = slice(d - 1, Tp - d, 2 * d)
        ta_ = pa[lo].copy()
        tb_ = pb[lo].copy()
        pa[lo] = pa[hi]
        pb[lo] = pb[hi]
        pa[hi], pb[hi] = _combine(kind, pa[hi], pb[hi], ta_, tb_)
        d //= 2

    # exclusive prefix -> inclusive states; x_0 = 0 makes x_t = prefix_t.b
    _, ib = _combine(kind, pa[:T], pb[:T], oa[:T], ob[:T])
    return np.moveaxis(ib, 0, bt_ax)


def scan_backward(
    elem: ScanElement, states: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints (da, db) of the recurrence given output cotangents g.

    The state adjoint lam_t = g_t + a_{t+1}^T lam_{t+1} is itself a linear
    recurrence run in reverse, so it reuses the same Blelloch kernel on
    the time-reversed, transposed elements.  Then db_t = lam_t and
    da_t = lam_t (x_{t-1})^T (with the kind-appropriate product).
    """
    kind = elem.kind
    a, b, T = _broadcast_elements(kind, elem.a, elem.b)
    at_ax = -(1 + _A_TRAIL[kind])
    bt_ax = -(1 + _B_TRAIL[kind])

    wa = np.moveaxis(a, at_ax, 0)
    adj = _adjoint_a(kind, wa)
    # reverse-time factors, shifted by one: position s multiplies by a_{T+2-s}^T
    ra = np.empty_like(adj)
    ra[0] = _identity_a(kind, adj.shape[1:])
    if T > 1:
        ra[1:] = adj[::-1][: T - 1]
    rg = np.moveaxis(g, bt_ax, 0)[::-1]
    lam_rev = scan_linear(
        ScanElement(np.moveaxis(ra, 0, at_ax), np.moveaxis(np.ascontiguousarray(rg), 0, bt_ax), kind)
    )
    lam = np.flip(np.moveaxis(lam_rev, bt_ax, 0), axis=0)

    ws = np.moveaxis(states, bt_ax, 0)
    x_prev = np.empty_like(ws)
    x_prev[0] = 0.0
    if T > 1:
        x_prev[1:] = ws[: T - 1]

    da_full = _grad_a(kind, lam, x_prev)
    da = np.moveaxis(da_full, 0, at_ax)
    db = np.moveaxis(lam, 0, bt_ax)
    return da, db
