"""Sequence blocks: four diagonal state-space recurrences behind one shape.

Every block maps [..., T, H] -> [..., T, H] as

    h_out = h_in + glu(recurrence(layer_norm(h_in)))

with a pre-norm, a state-space recurrence over P channels evaluated by
the parallel scan, a GLU mixer (linear value gated by a sigmoid-linear
gate) on the recurrence's real output, and a residual add.  No dropout
anywhere.  The four recurrences:

    lru     complex diagonal x_t = lambda * x_{t-1} + gamma * (B u_t),
            |lambda| = exp(-exp(nu_log)) initialized in the ring
            [0.9, 0.999], gamma = sqrt(1 - |lambda|^2),
            y = Re(C x) + d * u

    s5      complex diagonal MIMO discretized by zero-order hold with a
            learnable per-channel timescale: abar = exp(dt * Lambda),
            bbar u = ((abar - 1) / Lambda) * (B u), y = Re(C x) + d * u

    linoss  forced harmonic oscillator y'' = -A y + B u discretized
            implicitly; the per-channel state (z, y) evolves under the
            2x2 transition [[S, -dt*A*S], [dt*S, 1 - dt^2*A*S]] with
            S = 1/(1 + dt^2 A), spectral radius <= 1 for A >= 0

    lrcssm  input-dependent real diagonal a_t = sigmoid(W_a u_t + b_a)
            with drive b_t = (1 - a_t) * tanh(W_b u_t + b_b), which keeps
            |x_t| <= 1 regardless of sequence length

Complex parameters are stored as separate (re, im) real tensors, so
they contribute two real parameters per complex scalar to the counts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, param
from .errors import ConfigError

ARCHS = ("LRU", "S5", "LinOSS", "LrcSSM")

_NORM_EPS = 1e-6


# --- parameter containers -------------------------------------------------------


@dataclass
class EncoderParams:
    """Linear lift from input width to the hidden size."""

    weight: Tensor  # [c, H]
    bias: Tensor  # [H]


@dataclass
class HeadParams:
    """Mean-pool over time, then a linear map to the label logits."""

    weight: Tensor  # [H, n_classes]
    bias: Tensor  # [n_classes]


@dataclass
class _CommonBlock:
    norm_gain: Tensor
    norm_bias: Tensor
    glu_value_w: Tensor
    glu_value_b: Tensor
    glu_gate_w: Tensor
    glu_gate_b: Tensor
    feedthrough: Tensor  # d, per hidden channel


@dataclass
class LRUParams(_CommonBlock):
    nu_log: Tensor  # [P]; |lambda| = exp(-exp(nu_log))
    theta: Tensor  # [P]; phase
    b_re: Tensor  # [H, P]
    b_im: Tensor
    c_re: Tensor  # [P, H]
    c_im: Tensor

    arch = "LRU"


@dataclass
class S5Params(_CommonBlock):
    re_log: Tensor  # [P]; Re(Lambda) = -exp(re_log)
    im: Tensor  # [P]; Im(Lambda)
    log_dt: Tensor  # [P]; per-channel timescale
    b_re: Tensor
    b_im: Tensor
    c_re: Tensor
    c_im: Tensor

    arch = "S5"


@dataclass
class LinOSSParams(_CommonBlock):
    a_hat: Tensor  # [P]; frequency A = relu(a_hat)
    dt_hat: Tensor  # [P]; step dt = sigmoid(dt_hat)
    b_w: Tensor  # [H, P]
    c_w: Tensor  # [P, H]

    arch = "LinOSS"


@dataclass
class LrcSSMParams(_CommonBlock):
    gate_w: Tensor  # [H, P]
    gate_b: Tensor  # [P]
    drive_w: Tensor  # [H, P]
    drive_b: Tensor  # [P]
    c_w: Tensor  # [P, H]

    arch = "LrcSSM"


BlockParams = LRUParams | S5Params | LinOSSParams | LrcSSMParams

_PARAM_TYPES = {
    "LRU": LRUParams,
    "S5": S5Params,
    "LinOSS": LinOSSParams,
    "LrcSSM": LrcSSMParams,
}


def named_tensors(obj) -> Iterator[tuple[str, Tensor]]:
    """Declared parameter tensors of a params dataclass, in field order."""
    for f in dataclasses.fields(obj):
        yield f.name, getattr(obj, f.name)


def count_params(*objs) -> int:
    """Total number of scalar parameters across the given containers."""
    return sum(t.size for obj in objs for _, t in named_tensors(obj))


def param_breakdown(*objs) -> dict[str, int]:
    """Per-tensor parameter counts keyed by field name (duplicates summed)."""
    out: dict[str, int] = {}
    for obj in objs:
        for name, t in named_tensors(obj):
            out[name] = out.get(name, 0) + t.size
    return out


def clone_params(obj):
    """Deep copy with bit-identical values; copies stay independent leaves."""
    kw = {f.name: param(getattr(obj, f.name).data.copy()) for f in dataclasses.fields(obj)}
    return type(obj)(**kw)


# --- initialization --------------------------------------------------------------


def _common_init(hidden: int, rng: np.random.Generator) -> dict:
    return dict(
        norm_gain=param(np.ones(hidden)),
        norm_bias=param(np.zeros(hidden)),
        glu_value_w=param(rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)),
        glu_value_b=param(np.zeros(hidden)),
        glu_gate_w=param(rng.standard_normal((hidden, hidden)) / np.sqrt(hidden)),
        glu_gate_b=param(np.zeros(hidden)),
        feedthrough=param(rng.standard_normal(hidden)),
    )


def init_block(arch: str, hidden: int, state: int, rng: np.random.Generator) -> BlockParams:
    """Fresh block parameters; draws happen in a fixed order per arch."""
    if arch not in _PARAM_TYPES:
        raise ConfigError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    common = _common_init(hidden, rng)
    cplx_in = lambda: param(rng.standard_normal((hidden, state)) / np.sqrt(2.0 * hidden))
    cplx_out = lambda: param(rng.standard_normal((state, hidden)) / np.sqrt(2.0 * state))
    if arch == "LRU":
        r_min, r_max = 0.9, 0.999
        u = rng.uniform(0.0, 1.0, state)
        mag = np.sqrt(u * (r_max**2 - r_min**2) + r_min**2)
        return LRUParams(
            **common,
            nu_log=param(np.log(-np.log(mag))),
            theta=param(rng.uniform(0.0, 2.0 * np.pi, state)),
            b_re=cplx_in(),
            b_im=cplx_in(),
            c_re=cplx_out(),
            c_im=cplx_out(),
        )
    if arch == "S5":
        return S5Params(
            **common,
            re_log=param(np.full(state, np.log(0.5))),
            im=param(np.pi * np.arange(state, dtype=np.float64)),
            log_dt=param(rng.uniform(np.log(1e-3), np.log(1e-1), state)),
            b_re=cplx_in(),
            b_im=cplx_in(),
            c_re=cplx_out(),
            c_im=cplx_out(),
        )
    if arch == "LinOSS":
        return LinOSSParams(
            **common,
            a_hat=param(rng.uniform(0.0, 1.0, state)),
            dt_hat=param(rng.uniform(-1.0, 1.0, state)),
            b_w=param(rng.standard_normal((hidden, state)) / np.sqrt(hidden)),
            c_w=param(rng.standard_normal((state, hidden)) / np.sqrt(state)),
        )
    return LrcSSMParams(
        **common,
        gate_w=param(rng.standard_normal((hidden, state)) / np.sqrt(hidden)),
        gate_b=param(np.zeros(state)),
        drive_w=param(rng.standard_normal((hidden, state)) / np.sqrt(hidden)),
        drive_b=param(np.zeros(state)),
        c_w=param(rng.standard_normal((state, hidden)) / np.sqrt(state)),
    )


def init_encoder(width: int, hidden: int, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        weight=param(rng.standard_normal((width, hidden)) / np.sqrt(width)),
        bias=param(np.zeros(hidden)),
    )


def init_head(hidden: int, n_classes: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        weight=param(rng.standard_normal((hidden, n_classes)) / np.sqrt(hidden)),
        bias=param(np.zeros(n_classes)),
    )


# --- forward passes ---------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = ad.mean_(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.mean_(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + _NORM_EPS) * gain + bias


def _glu(p: _CommonBlock, r: Tensor) -> Tensor:
    value = r @ p.glu_value_w + p.glu_value_b
    gate = ad.sigmoid(r @ p.glu_gate_w + p.glu_gate_b)
    return value * gate


def _recur_lru(p: LRUParams, u: Tensor) -> Tensor:
    mag = ad.exp(-ad.exp(p.nu_log))
    lam = ad.cpair(mag * ad.cos(p.theta), mag * ad.sin(p.theta))
    gamma = ad.sqrt(1.0 - mag * mag)
    forcing = ad.cpair(gamma * (u @ p.b_re), gamma * (u @ p.b_im))
    x = ad.scan_linear(lam, forcing, "cdiag")
    return ad.plane(x, 0) @ p.c_re - ad.plane(x, 1) @ p.c_im + p.feedthrough * u


def _recur_s5(p: S5Params, u: Tensor) -> Tensor:
    lam_re = -ad.exp(p.re_log)
    dt = ad.exp(p.log_dt)
    zr, zi = dt * lam_re, dt * p.im
    abar = ad.cpair(ad.exp(zr) * ad.cos(zi), ad.exp(zr) * ad.sin(zi))
    bcoef = ad.cdiv(abar - np.array([1.0, 0.0]), ad.cpair(lam_re, p.im))
    bu = ad.cpair(u @ p.b_re, u @ p.b_im)
    x = ad.scan_linear(abar, ad.cmul(bcoef, bu), "cdiag")
    return ad.plane(x, 0) @ p.c_re - ad.plane(x, 1) @ p.c_im + p.feedthrough * u


def _recur_linoss(p: LinOSSParams, u: Tensor) -> Tensor:
    freq = ad.relu(p.a_hat)
    dt = ad.sigmoid(p.dt_hat)
    s = 1.0 / (1.0 + dt * dt * freq)
    row_z = ad.stack([s, -(dt * freq * s)], axis=-1)
    row_y = ad.stack([dt * s, 1.0 - dt * dt * freq * s], axis=-1)
    m = ad.stack([row_z, row_y], axis=-2)
    bu = u @ p.b_w
    forcing = ad.cpair(dt * s * bu, dt * dt * s * bu)
    x = ad.scan_linear(m, forcing, "mat2")
    return ad.plane(x, 1) @ p.c_w + p.feedthrough * u


def _recur_lrcssm(p: LrcSSMParams, u: Tensor) -> Tensor:
    gate = ad.sigmoid(u @ p.gate_w + p.gate_b)
    drive = (1.0 - gate) * ad.tanh(u @ p.drive_w + p.drive_b)
    x = ad.scan_linear(gate, drive, "diag")
    return x @ p.c_w + p.feedthrough * u


_RECURRENCES = {
    LRUParams: _recur_lru,
    S5Params: _recur_s5,
    LinOSSParams: _recur_linoss,
    LrcSSMParams: _recur_lrcssm,
}


def block_forward(p: BlockParams, h: Tensor) -> Tensor:
    """Pre-norm -> recurrence -> GLU mixer -> residual; preserves [..., T, H]."""
    u = layer_norm(h, p.norm_gain, p.norm_bias)
    r = _RECURRENCES[type(p)](p, u)
    return h + _glu(p, r)


def encoder_forward(p: EncoderParams, x: Tensor) -> Tensor:
    return x @ p.weight + p.bias


def head_forward(p: HeadParams, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Logits from mean-pooled features; mask marks valid time steps."""
    if mask is None:
        pooled = ad.mean_(h, axis=-2)
    else:
        m = np.asarray(mask, dtype=np.float64)
        weighted = ad.sum_(h * Tensor(m[..., None]), axis=-2)
        pooled = weighted * Tensor(1.0 / np.maximum(m.sum(axis=-1), 1.0)[..., None])
    return pooled @ p.weight + p.bias
