"""Depth-recurrent stacks: L block applications drawn from m unique blocks.

A stack applies its unique blocks periodically: position j (0-based)
runs block j mod m, so m = 1 is AAAAAA (one block looped), m = L is
ABCDEF (plain depth), and intermediate divisors give ABABAB / ABCABC.
Only periodic patterns are representable, and any stack with m unique
blocks embeds exactly into one with m' unique blocks whenever m | m'
(copy block j mod m into slot j); the embedded model reproduces the
source bit for bit because it runs the same arithmetic on the same
values.  m = 2 and m = 3 do not divide one another, so neither embeds
in the other.

Supervision taps the hidden state after every full pass through the
unique sequence: r = L / m taps h^(1)..h^(r).  `loss_final` reads only
h^(r); `loss_block` averages the shared head's loss over all r taps
with uniform 1/r weights and no stop-gradients.  The encoder and head
are never shared across patterns being compared; only block parameters
participate in tying.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, param
from .blocks import (
    BlockParams,
    EncoderParams,
    HeadParams,
    block_forward,
    clone_params,
    count_params,
    encoder_forward,
    head_forward,
    init_block,
    init_encoder,
    init_head,
    named_tensors,
)
from .errors import ConfigError


def pattern_string(depth: int, n_unique: int) -> str:
    """Canonical letter pattern, e.g. (6, 2) -> 'ABABAB'."""
    if n_unique > 26:
        raise ConfigError("patterns with more than 26 unique blocks have no letter form")
    return "".join(string.ascii_uppercase[j % n_unique] for j in range(depth))


def parse_pattern(value) -> tuple[int, int]:
    """(depth, n_unique) from 'ABABAB'-style strings or (L, m) pairs.

    Only canonical periodic strings are accepted; 'AABBCC' has no
    periodic reading and is rejected.
    """
    if isinstance(value, (tuple, list)):
        depth, n_unique = int(value[0]), int(value[1])
    else:
        s = str(value).strip().upper()
        if "," in s:
            parts = s.split(",")
            if len(parts) != 2:
                raise ConfigError(f"pattern pair must be 'L,m', got {value!r}")
            depth, n_unique = int(parts[0]), int(parts[1])
        else:
            depth, n_unique = len(s), len(set(s))
            if s != pattern_string(depth, n_unique):
                raise ConfigError(
                    f"pattern {value!r} is not periodic; expected e.g. "
                    f"{pattern_string(depth, max(1, n_unique))!r}"
                )
    if depth < 1 or n_unique < 1 or depth % n_unique != 0:
        raise ConfigError(
            f"pattern needs 1 <= m <= L with m dividing L, got L={depth}, m={n_unique}"
        )
    return depth, n_unique


SUPERVISIONS = ("final", "block")


@dataclass(frozen=True)
class StackConfig:
    depth: int = 6
    n_unique: int = 6
    supervision: str = "final"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be positive, got {self.depth}")
        if self.n_unique < 1 or self.depth % self.n_unique != 0:
            raise ConfigError(
                f"n_unique must divide depth, got depth={self.depth}, n_unique={self.n_unique}"
            )
        if self.supervision not in SUPERVISIONS:
            raise ConfigError(f"supervision must be one of {SUPERVISIONS}, got {self.supervision!r}")

    @property
    def pattern(self) -> str:
        return pattern_string(self.depth, self.n_unique)

    @property
    def n_repeats(self) -> int:
        return self.depth // self.n_unique


@dataclass
class StackModel:
    arch: str
    config: StackConfig
    width: int
    n_classes: int
    hidden: int
    state: int
    encoder: EncoderParams
    blocks: list[BlockParams]
    head: HeadParams

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"encoder.{n}", t) for n, t in named_tensors(self.encoder)]
        for i, blk in enumerate(self.blocks):
            out.extend((f"blocks.{i}.{n}", t) for n, t in named_tensors(blk))
        out.extend((f"head.{n}", t) for n, t in named_tensors(self.head))
        return out

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.parameters()]

    def n_params(self) -> int:
        return count_params(self.encoder, *self.blocks, self.head)


@dataclass
class ForwardTrace:
    """Hidden states tapped after each full pass through the unique blocks."""

    h_reps: list[Tensor] = field(default_factory=list)

    @property
    def final(self) -> Tensor:
        return self.h_reps[-1]


def build_stack(
    arch: str,
    config: StackConfig,
    width: int,
    n_classes: int,
    hidden: int = 64,
    state: int = 64,
    rng: np.random.Generator | int = 0,
) -> StackModel:
    """Fresh model; the RNG is consumed in a fixed order (encoder, blocks, head)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if width < 1 or n_classes < 2:
        raise ConfigError(f"need width >= 1 and n_classes >= 2, got {width}, {n_classes}")
    encoder = init_encoder(width, hidden, rng)
    blocks = [init_block(arch, hidden, state, rng) for _ in range(config.n_unique)]
    head = init_head(hidden, n_classes, rng)
    return StackModel(arch, config, width, n_classes, hidden, state, encoder, blocks, head)


def stack_forward(model: StackModel, x, supervision_period: int | None = None) -> ForwardTrace:
    """Encoder then L periodic block applications, tapping every `period` blocks.

    The period defaults to the model's own n_unique.  Verification passes
    a source model's n_unique so an embedded (untied) model can be
    supervised at the source's repetition boundaries.
    """
    period = model.config.n_unique if supervision_period is None else supervision_period
    if period < 1 or model.config.depth % period != 0:
        raise ConfigError(f"supervision period {period} must divide depth {model.config.depth}")
    h = encoder_forward(model.encoder, x if isinstance(x, Tensor) else Tensor(x))
    trace = ForwardTrace()
    for j in range(model.config.depth):
        h = block_forward(model.blocks[j % model.config.n_unique], h)
        if (j + 1) % period == 0:
            trace.h_reps.append(h)
    return trace


def trace_logits(model: StackModel, trace: ForwardTrace, mask: np.ndarray | None = None) -> Tensor:
    return head_forward(model.head, trace.final, mask=mask)


def loss_final(
    model: StackModel, trace: ForwardTrace, labels: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """Cross entropy of the last tap's logits, averaged over the batch."""
    logits = head_forward(model.head, trace.final, mask=mask)
    return ad.softmax_cross_entropy(logits, labels).mean()


def loss_block(
    model: StackModel, trace: ForwardTrace, labels: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    """Uniform average of the shared head's loss over every tap h^(1)..h^(r).

    No stop-gradients: every tap backpropagates into every earlier
    block application.
    """
    r = len(trace.h_reps)
    total = None
    for h in trace.h_reps:
        logits = head_forward(model.head, h, mask=mask)
        term = ad.softmax_cross_entropy(logits, labels).mean()
        total = term if total is None else total + term
    return total * (1.0 / r)


def stack_loss(
    model: StackModel, x, labels: np.ndarray, mask: np.ndarray | None = None
) -> Tensor:
    trace = stack_forward(model, x)
    fn = loss_final if model.config.supervision == "final" else loss_block
    return fn(model, trace, labels, mask=mask)


def predict_logits(model: StackModel, x, mask: np.ndarray | None = None) -> np.ndarray:
    """Final logits without recording a tape (evaluation path)."""
    trace = stack_forward(model, x)
    return trace_logits(model, trace, mask=mask).data


# --- periodic embedding ------------------------------------------------------------


def embed_periodic(model: StackModel, n_unique_target: int) -> StackModel:
    """Re-express the stack with more unique blocks, bit-identically.

    Requires n_unique | n_unique_target | depth.  Slot j of the new
    model holds a copy of source block j mod m; because j mod m' and j
    agree modulo m when m | m', the new model applies identical values
    in an identical order and its outputs match the source bitwise.
    """
    m = model.config.n_unique
    L = model.config.depth
    if n_unique_target % m != 0 or L % n_unique_target != 0:
        raise ConfigError(
            f"cannot embed {m} unique blocks into {n_unique_target}: "
            f"need {m} | {n_unique_target} | {L}"
        )
    cfg = StackConfig(L, n_unique_target, model.config.supervision)
    blocks = [clone_params(model.blocks[j % m]) for j in range(n_unique_target)]
    return StackModel(
        model.arch,
        cfg,
        model.width,
        model.n_classes,
        model.hidden,
        model.state,
        EncoderParams(param(model.encoder.weight.data.copy()), param(model.encoder.bias.data.copy())),
        blocks,
        HeadParams(param(model.head.weight.data.copy()), param(model.head.bias.data.copy())),
    )


@dataclass
class AggregationReport:
    """Tied-vs-untied gradient comparison for one model and supervision mode."""

    supervision: str
    max_rel_error: float
    loss_tied: float
    loss_untied: float
    all_zero: bool

    @property
    def loss_match(self) -> bool:
        return self.loss_tied == self.loss_untied


def verify_gradient_aggregation(
    model: StackModel,
    x: np.ndarray,
    labels: np.ndarray,
    supervision: str | None = None,
    mask: np.ndarray | None = None,
) -> AggregationReport:
    """Check d(tied loss)/d(theta) equals the sum over untied copies' gradients.

    The untied model is the full embedding (m' = L) of the source,
    supervised at the source's own repetition boundaries so both sides
    compute the same loss.
    """
    sup = supervision or model.config.supervision
    if sup not in SUPERVISIONS:
        raise ConfigError(f"supervision must be one of {SUPERVISIONS}, got {sup!r}")
    loss_of = loss_final if sup == "final" else loss_block
    m = model.config.n_unique
    L = model.config.depth

    tied_params = model.param_tensors()
    with Tape():
        trace = stack_forward(model, x)
        loss_t = loss_of(model, trace, labels, mask=mask)
        grads_t = backward(loss_t, tied_params)

    untied = embed_periodic(model, L)
    untied_params = untied.param_tensors()
    with Tape():
        trace_u = stack_forward(untied, x, supervision_period=m)
        loss_u = loss_of(untied, trace_u, labels, mask=mask)
        grads_u = backward(loss_u, untied_params)

    worst = 0.0
    tied_scale = 0.0
    # block parameters: tied gradient vs sum over the r copies of each slot
    for j, blk in enumerate(model.blocks):
        for name, t in named_tensors(blk):
            tied_g = grads_t[t].data
            total = np.zeros_like(tied_g)
            for i in range(j, L, m):
                total += grads_u[getattr(untied.blocks[i], name)].data
            scale = np.abs(tied_g).max()
            tied_scale = max(tied_scale, scale)
            denom = scale if scale > 0 else 1.0
            worst = max(worst, float(np.abs(total - tied_g).max() / denom))
    # encoder and head are shared once on both sides: gradients must agree directly
    for (_, a), (_, b) in zip(
        list(named_tensors(model.encoder)) + list(named_tensors(model.head)),
        list(named_tensors(untied.encoder)) + list(named_tensors(untied.head)),
    ):
        ga, gb = grads_t[a].data, grads_u[b].data
        denom = max(np.abs(ga).max(), 1.0)
        worst = max(worst, float(np.abs(ga - gb).max() / denom))

    return AggregationReport(
        supervision=sup,
        max_rel_error=worst,
        loss_tied=loss_t.item(),
        loss_untied=loss_u.item(),
        all_zero=tied_scale == 0.0,
    )


# --- checkpointing -------------------------------------------------------------------


_CKPT_FORMAT = 1


def save_checkpoint(path, model: StackModel) -> None:
    """Write parameter arrays plus metadata; round-trips bit-exactly."""
    meta = {
        "format": _CKPT_FORMAT,
        "arch": model.arch,
        "depth": model.config.depth,
        "n_unique": model.config.n_unique,
        "supervision": model.config.supervision,
        "width": model.width,
        "n_classes": model.n_classes,
        "hidden": model.hidden,
        "state": model.state,
    }
    arrays = {name: t.data for name, t in model.parameters()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> StackModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"].tobytes()).decode())
        if meta.get("format") != _CKPT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    cfg = StackConfig(meta["depth"], meta["n_unique"], meta["supervision"])
    model = build_stack(
        meta["arch"], cfg, meta["width"], meta["n_classes"], meta["hidden"], meta["state"], rng=0
    )
    for name, t in model.parameters():
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing parameter {name!r}")
        if arrays[name].shape != t.data.shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data = arrays[name].astype(np.float64)
    return model
