"""Input reshaping: trade sequence length against input width.

A series of shape (T, w) is flattened time-major to length T*w, zero
padded up to the next multiple of the concentration factor c, and
re-chunked into rows of width c:

    rows = ceil(T * w / c),    pad_count = rows * c - T * w  in [0, c).

Two regimes share that arithmetic.  `low_dim_concat` additionally
requires c to be a multiple of w, in which case each row is exactly
c/w consecutive time steps concatenated; `high_dim_flatten` accepts
any c.  c = 1 short-circuits to `identity` and returns the input
unchanged.  The inverse drops the pad after checking it is still zero,
so a round trip is exact and tampering is detected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

log = logging.getLogger(__name__)

REGIMES = ("identity", "low_dim_concat", "high_dim_flatten")

# width bands relative to the 64-wide architecture; the six canonical
# corpora carry explicit tags, this rule covers everything else
_LOW_MAX = 3
_MEDIUM_MAX = 16

DIM_TAGS = ("low", "medium", "high")


def dim_tag_for_width(width: int) -> str:
    if width <= _LOW_MAX:
        return "low"
    if width <= _MEDIUM_MAX:
        return "medium"
    return "high"


@dataclass(frozen=True)
class ReshapeSpec:
    """Frozen description of one reshape; enough to invert it exactly."""

    concentration: int
    regime: str
    original_shape: tuple[int, int]  # (T, w)

    def __post_init__(self):
        T, w = self.original_shape
        c = self.concentration
        if c < 1:
            raise ConfigError(f"concentration must be >= 1, got {c}")
        if T < 1 or w < 1:
            raise ConfigError(f"original shape must be positive, got {self.original_shape}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "identity" and c != 1:
            raise ConfigError(f"identity regime requires c = 1, got c = {c}")
        if self.regime == "low_dim_concat" and c % w != 0:
            raise ConfigError(
                f"low_dim_concat requires c to be a multiple of the width, got c={c}, w={w}"
            )

    @property
    def rows(self) -> int:
        T, w = self.original_shape
        return -(-T * w // self.concentration)

    @property
    def pad_count(self) -> int:
        T, w = self.original_shape
        return self.rows * self.concentration - T * w

    @property
    def out_shape(self) -> tuple[int, int]:
        return (self.rows, self.concentration) if self.regime != "identity" else self.original_shape


def choose_regime(width: int, concentration: int, dim_tag: str | None = None) -> str:
    """Pick a regime from the dataset's dimensionality tag.

    Low/medium-width data concatenates whole time steps when c allows
    it; otherwise it falls back to the flatten regime with a logged
    note.  High-width data always flattens.  c = 1 is the identity.
    """
    if concentration == 1:
        return "identity"
    tag = dim_tag or dim_tag_for_width(width)
    if tag not in DIM_TAGS:
        raise ConfigError(f"dim_tag must be one of {DIM_TAGS}, got {tag!r}")
    if tag in ("low", "medium"):
        if concentration % width == 0:
            return "low_dim_concat"
        log.warning(
            "concentration %d is not a multiple of width %d; falling back to high_dim_flatten",
            concentration,
            width,
        )
    return "high_dim_flatten"


def make_spec(
    T: int, width: int, concentration: int, dim_tag: str | None = None, regime: str = "auto"
) -> ReshapeSpec:
    if regime == "auto":
        regime = choose_regime(width, concentration, dim_tag)
    elif regime == "identity" and concentration != 1:
        raise ConfigError(f"identity regime requires c = 1, got c = {concentration}")
    return ReshapeSpec(concentration, regime, (T, width))


def reshape_forward(x: np.ndarray, spec: ReshapeSpec) -> np.ndarray:
    """(T, w) -> (rows, c); leading batch axes pass through unchanged."""
    x = np.asarray(x)
    if x.shape[-2:] != spec.original_shape:
        raise ShapeError(f"input trailing shape {x.shape[-2:]} != spec {spec.original_shape}")
    if spec.regime == "identity":
        return x
    lead = x.shape[:-2]
    T, w = spec.original_shape
    flat = x.reshape(lead + (T * w,))
    if spec.pad_count:
        pad = np.zeros(lead + (spec.pad_count,), dtype=x.dtype)
        flat = np.concatenate([flat, pad], axis=-1)
    return flat.reshape(lead + (spec.rows, spec.concentration))


def reshape_inverse(y: np.ndarray, spec: ReshapeSpec) -> np.ndarray:
    """Exact inverse of reshape_forward; rejects modified padding."""
    y = np.asarray(y)
    if spec.regime == "identity":
        if y.shape[-2:] != spec.original_shape:
            raise ShapeError(f"input trailing shape {y.shape[-2:]} != spec {spec.original_shape}")
        return y
    if y.shape[-2:] != (spec.rows, spec.concentration):
        raise ShapeError(f"input trailing shape {y.shape[-2:]} != spec output {spec.out_shape}")
    lead = y.shape[:-2]
    T, w = spec.original_shape
    flat = y.reshape(lead + (spec.rows * spec.concentration,))
    if spec.pad_count:
        tail = flat[..., T * w :]
        if np.any(tail != 0):
            raise ContractError(
                f"padding region is no longer zero ({np.count_nonzero(tail)} cells); "
                "refusing to invert"
            )
    return flat[..., : T * w].reshape(lead + (T, w))
