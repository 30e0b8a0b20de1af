"""Training harness: Adam, gradient clipping, early stopping, seeded grids.

Everything is deterministic given the config: the split, the parameter
init, and the per-epoch shuffles each draw from independent child
streams of the config seed, so two runs of the same config produce
bit-identical curves.

Per run we record the pre-update loss over the full train portion
(`initial_loss`), per-epoch mean minibatch loss, validation/test
accuracy per epoch, and the test accuracy at the best-validation epoch.
Non-finite losses or gradients mark the run diverged and end it; grid
selection skips diverged runs and reports them.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, apply_reshape, normalize, split_dataset
from .errors import AggregationError, ConfigError
from .reshape import make_spec
from .stack import (
    StackConfig,
    StackModel,
    build_stack,
    parse_pattern,
    predict_logits,
    stack_loss,
)

_EVAL_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "LRU"
    pattern: str = "AAAAAA"
    supervision: str = "final"
    concentration: int = 1
    regime: str = "auto"
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    clip_norm: float | None = 1.0
    hidden: int = 64
    state: int = 64

    def __post_init__(self):
        parse_pattern(self.pattern)  # raises ConfigError on malformed patterns
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("batch_size must be >= 1; max_epochs and patience >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


# --- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: list, grads: dict) -> None:
    """One in-place update; `params` is [(name, tensor)], grads keyed by tensor.

    With bias correction the first step reduces to
    theta -= lr * g / (|g| + eps), which the tests pin down exactly.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    # bias-corrected step size, folding the corrections into the scalars
    correction = np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name, p in params:
        g = grads[p].data if hasattr(grads[p], "data") else grads[p]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * correction * m / (np.sqrt(v) + state.eps * np.sqrt(1.0 - b2**t))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`."""
    total = 0.0
    arrays = [g.data if hasattr(g, "data") else g for g in grads.values()]
    for g in arrays:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in arrays:
            g *= scale
    return norm


# --- single runs -------------------------------------------------------------------


@dataclass
class RunResult:
    config: TrainConfig
    n_params: int
    initial_loss: float
    train_losses: list[float]
    val_accs: list[float]
    test_accs: list[float]
    best_epoch: int
    best_val_acc: float
    test_acc_at_best: float
    diverged: bool
    epochs_run: int
    elapsed_seconds: float

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["config"] = dataclasses.asdict(self.config)
        return d


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    width: int


def prepare_splits(ds: Dataset, config: TrainConfig) -> PreparedData:
    """Seeded split, train-statistics normalization, then reshaping."""
    sp = split_dataset(ds, config.seed)
    norm, _, _ = normalize(ds, sp.train)
    spec = make_spec(
        ds.steps, ds.width, config.concentration, dim_tag=ds.dim_tag, regime=config.regime
    )
    parts = [apply_reshape(norm.subset(idx), spec) for idx in (sp.train, sp.val, sp.test)]
    return PreparedData(*parts, width=parts[0].width)


def _batch_mask(ds: Dataset, idx: np.ndarray) -> np.ndarray | None:
    if np.all(ds.lengths == ds.steps):
        return None
    return ds.mask[idx]


def full_loss(model: StackModel, ds: Dataset) -> float:
    """Mean loss over a whole dataset without recording gradients."""
    total, n = 0.0, ds.n
    for lo in range(0, n, _EVAL_BATCH):
        idx = np.arange(lo, min(lo + _EVAL_BATCH, n))
        loss = stack_loss(model, ds.series[idx], ds.labels[idx], mask=_batch_mask(ds, idx))
        total += float(loss.data) * len(idx)
    return total / n


def accuracy(model: StackModel, ds: Dataset) -> float:
    hits, n = 0, ds.n
    for lo in range(0, n, _EVAL_BATCH):
        idx = np.arange(lo, min(lo + _EVAL_BATCH, n))
        logits = predict_logits(model, ds.series[idx], mask=_batch_mask(ds, idx))
        hits += int((logits.argmax(axis=-1) == ds.labels[idx]).sum())
    return hits / n


def train_one(
    config: TrainConfig,
    dataset: Dataset,
    model: StackModel | None = None,
    log_path=None,
) -> RunResult:
    """Train one model on one seeded split of `dataset`.

    `model` overrides the seeded init (the split and shuffles still
    follow the config seed), which lets callers compare differently
    expressed but numerically identical stacks under the same data
    order.
    """
    t0 = time.perf_counter()
    prep = prepare_splits(dataset, config)
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    if model is None:
        depth, n_unique = parse_pattern(config.pattern)
        model = build_stack(
            config.arch,
            StackConfig(depth=depth, n_unique=n_unique, supervision=config.supervision),
            width=prep.width,
            n_classes=dataset.n_classes,
            hidden=config.hidden,
            state=config.state,
            rng=np.random.default_rng(init_seq),
        )
    shuffle_rng = np.random.default_rng(shuffle_seq)
    params = model.parameters()
    opt = AdamState(lr=config.lr)

    initial_loss = full_loss(model, prep.train)
    train_losses: list[float] = []
    val_accs: list[float] = []
    test_accs: list[float] = []
    best_val, best_epoch, best_test = -1.0, -1, float("nan")
    diverged = not np.isfinite(initial_loss)
    bad = 0
    log_records = []

    for epoch in range(config.max_epochs):
        if diverged:
            break
        perm = shuffle_rng.permutation(prep.train.n)
        epoch_loss, seen = 0.0, 0
        for lo in range(0, prep.train.n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            # divergence is detected by the finite checks below, so the
            # intermediate overflow warnings on the way there are noise
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"), ad.Tape():
                loss = stack_loss(
                    model,
                    prep.train.series[idx],
                    prep.train.labels[idx],
                    mask=_batch_mask(prep.train, idx),
                )
                grads = ad.backward(loss, [p for _, p in params])
            value = float(loss.data)
            if not np.isfinite(value) or any(
                not np.isfinite(g.data).all() for g in grads.values()
            ):
                diverged = True
                break
            if config.clip_norm is not None:
                clip_global_norm(grads, config.clip_norm)
            adam_step(opt, params, grads)
            epoch_loss += value * len(idx)
            seen += len(idx)
        if diverged:
            break
        train_losses.append(epoch_loss / seen)
        val_accs.append(accuracy(model, prep.val))
        test_accs.append(accuracy(model, prep.test))
        record = {
            "epoch": epoch,
            "train_loss": train_losses[-1],
            "val_acc": val_accs[-1],
            "test_acc": test_accs[-1],
        }
        log_records.append(record)
        if val_accs[-1] > best_val:
            best_val, best_epoch, best_test = val_accs[-1], epoch, test_accs[-1]
            bad = 0
        else:
            bad += 1
            if bad > config.patience:
                break

    elapsed = time.perf_counter() - t0
    result = RunResult(
        config=config,
        n_params=model.n_params(),
        initial_loss=initial_loss,
        train_losses=train_losses,
        val_accs=val_accs,
        test_accs=test_accs,
        best_epoch=best_epoch,
        best_val_acc=best_val if best_epoch >= 0 else float("nan"),
        test_acc_at_best=best_test,
        diverged=diverged,
        epochs_run=len(train_losses),
        elapsed_seconds=elapsed,
    )
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write(json.dumps({"config": result.to_json()["config"]}) + "\n")
            for record in log_records:
                fh.write(json.dumps(record) + "\n")
            fh.write(
                json.dumps(
                    {
                        "final": {
                            "best_epoch": result.best_epoch,
                            "best_val_acc": result.best_val_acc,
                            "test_acc_at_best": result.test_acc_at_best,
                            "diverged": result.diverged,
                        }
                    }
                )
                + "\n"
            )
    return result


# --- grids ------------------------------------------------------------------------


@dataclass
class GridResult:
    chosen_lr: float
    lr_val_means: dict[float, float]
    seed_test_accs: list[float]  # at the chosen lr, valid seeds only
    seeds: list[int]
    diverged_seeds: list[int]  # at the chosen lr
    mean_test_acc: float
    std_test_acc: float  # population std (ddof=0)
    runs: dict[float, list[RunResult]]

    def to_json(self) -> dict:
        return {
            "chosen_lr": self.chosen_lr,
            "lr_val_means": {str(k): v for k, v in self.lr_val_means.items()},
            "seed_test_accs": self.seed_test_accs,
            "seeds": self.seeds,
            "diverged_seeds": self.diverged_seeds,
            "mean_test_acc": self.mean_test_acc,
            "std_test_acc": self.std_test_acc,
        }


def _grid_cell(args) -> RunResult:
    config, dataset = args
    return train_one(config, dataset)


def grid_and_seeds(
    dataset: Dataset,
    base: TrainConfig,
    lrs: list[float],
    seeds: list[int],
    workers: int | None = None,
) -> GridResult:
    """Train every lr x seed cell, pick the lr with the best mean
    validation accuracy over its non-diverged seeds, and report the
    per-seed test accuracies at that lr."""
    if not lrs or not seeds:
        raise ConfigError("grid needs at least one lr and one seed")
    cells = [(base.replace(lr=lr, seed=seed), dataset) for lr in lrs for seed in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_grid_cell, cells))
    else:
        flat = [_grid_cell(c) for c in cells]
    runs = {lr: flat[i * len(seeds) : (i + 1) * len(seeds)] for i, lr in enumerate(lrs)}

    lr_val_means: dict[float, float] = {}
    for lr in lrs:
        valid = [r.best_val_acc for r in runs[lr] if not r.diverged]
        lr_val_means[lr] = float(np.mean(valid)) if valid else float("nan")
    usable = [lr for lr in lrs if np.isfinite(lr_val_means[lr])]
    if not usable:
        raise AggregationError("every run in the grid diverged; nothing to select")
    chosen = max(usable, key=lambda lr: lr_val_means[lr])

    chosen_runs = runs[chosen]
    test_accs = [r.test_acc_at_best for r in chosen_runs if not r.diverged]
    diverged_seeds = [s for s, r in zip(seeds, chosen_runs) if r.diverged]
    return GridResult(
        chosen_lr=chosen,
        lr_val_means=lr_val_means,
        seed_test_accs=test_accs,
        seeds=list(seeds),
        diverged_seeds=diverged_seeds,
        mean_test_acc=float(np.mean(test_accs)),
        std_test_acc=float(np.std(test_accs, ddof=0)),
        runs=runs,
    )
