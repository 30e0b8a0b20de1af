"""Training harness: optimizer math, determinism, early stop, divergence, grids."""

import json

import numpy as np
import pytest

from loopseq import autodiff as ad
from loopseq.autodiff import Tensor
from loopseq.data import synth_sine_task
from loopseq.errors import AggregationError, ConfigError
from loopseq.stack import StackConfig, build_stack, embed_periodic
from loopseq.train import (
    AdamState,
    GridResult,
    TrainConfig,
    adam_step,
    clip_global_norm,
    full_loss,
    grid_and_seeds,
    prepare_splits,
    train_one,
)


def _tiny_config(**kw) -> TrainConfig:
    base = dict(
        arch="LRU",
        pattern="2,1",
        supervision="final",
        concentration=1,
        lr=1e-2,
        seed=0,
        batch_size=16,
        max_epochs=2,
        patience=20,
        hidden=6,
        state=4,
    )
    base.update(kw)
    return TrainConfig(**base)


def _tiny_data(n=48, steps=16, seed=0, noise=0.1):
    return synth_sine_task(n=n, steps=steps, width=2, n_classes=2, noise=noise, seed=seed)


# --- Adam --------------------------------------------------------------------------


def test_adam_first_step_closed_form():
    # with bias correction the first update is exactly -lr * g / (|g| + eps)
    theta = ad.param(np.array([1.0, -2.0, 0.5]))
    g = np.array([0.3, -4.0, 1e-12])
    state = AdamState(lr=0.07)
    adam_step(state, [("theta", theta)], {theta: Tensor(g)})
    expected = np.array([1.0, -2.0, 0.5]) - 0.07 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(theta.data, expected, rtol=1e-12, atol=0)


def test_adam_matches_reference_implementation():
    # independent oracle: the textbook m-hat / v-hat form
    rng = np.random.default_rng(0)
    theta = ad.param(rng.standard_normal(5))
    ref = theta.data.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    lr, b1, b2, eps = 3e-3, 0.9, 0.999, 1e-8
    state = AdamState(lr=lr)
    for t in range(1, 30):
        g = rng.standard_normal(5)
        adam_step(state, [("theta", theta)], {theta: Tensor(g.copy())})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        np.testing.assert_allclose(theta.data, ref, rtol=1e-12, atol=1e-14)


def test_adam_minimizes_quadratic_bowl():
    target = np.array([3.0, -1.5, 0.25, 8.0])
    theta = ad.param(np.zeros(4))
    state = AdamState(lr=0.05)
    for _ in range(2000):
        g = 2.0 * (theta.data - target)
        adam_step(state, [("theta", theta)], {theta: Tensor(g)})
        if np.max(np.abs(theta.data - target)) < 1e-8:
            break
    assert np.max(np.abs(theta.data - target)) < 1e-6


def test_clip_global_norm():
    a, b = Tensor(np.array([3.0, 0.0])), Tensor(np.array([0.0, 4.0]))
    grads = {"a": a, "b": b}
    norm = clip_global_norm(grads, 2.5)
    assert norm == pytest.approx(5.0)
    joint = np.sqrt(np.sum(a.data**2) + np.sum(b.data**2))
    assert joint == pytest.approx(2.5)
    # under the threshold nothing moves
    c = Tensor(np.array([0.1, 0.1]))
    before = c.data.copy()
    clip_global_norm({"c": c}, 2.5)
    np.testing.assert_array_equal(c.data, before)


# --- single runs ---------------------------------------------------------------------


def test_train_one_shapes_and_ranges():
    res = train_one(_tiny_config(), _tiny_data())
    assert res.epochs_run == 2
    assert len(res.train_losses) == len(res.val_accs) == len(res.test_accs) == 2
    assert np.isfinite(res.initial_loss)
    assert all(0.0 <= a <= 1.0 for a in res.val_accs + res.test_accs)
    assert res.n_params > 0
    assert not res.diverged
    assert 0 <= res.best_epoch < 2


def test_train_one_bit_identical_across_runs():
    a = train_one(_tiny_config(), _tiny_data())
    b = train_one(_tiny_config(), _tiny_data())
    assert a.train_losses == b.train_losses
    assert a.val_accs == b.val_accs and a.test_accs == b.test_accs
    assert a.initial_loss == b.initial_loss


def test_train_one_seed_changes_run():
    a = train_one(_tiny_config(seed=0), _tiny_data())
    b = train_one(_tiny_config(seed=1), _tiny_data())
    assert a.initial_loss != b.initial_loss


def test_initial_loss_is_pre_update():
    # max_epochs=0 performs no updates, so initial_loss is the loss at init
    cfg = _tiny_config(max_epochs=0)
    data = _tiny_data()
    res = train_one(cfg, data)
    assert res.epochs_run == 0 and res.train_losses == []
    again = train_one(cfg, data)
    assert res.initial_loss == again.initial_loss


def test_patience_zero_stops_after_first_non_improvement():
    # an effectively frozen model keeps validation accuracy constant, so
    # epoch 0 sets the best and epoch 1 triggers the stop
    res = train_one(_tiny_config(lr=1e-12, max_epochs=50, patience=0), _tiny_data())
    assert res.epochs_run == 2
    assert res.best_epoch == 0


def test_divergent_lr_flags_and_aborts():
    res = train_one(_tiny_config(lr=1e5, max_epochs=30, clip_norm=None), _tiny_data())
    assert res.diverged
    assert res.epochs_run == 0 and res.train_losses == []
    assert np.isfinite(res.initial_loss)


def test_training_improves_on_separable_task():
    data = synth_sine_task(n=120, steps=32, width=2, n_classes=2, noise=0.05, seed=3)
    cfg = _tiny_config(hidden=12, state=12, max_epochs=15, lr=1e-2, batch_size=32)
    res = train_one(cfg, data)
    assert res.best_val_acc >= 0.7
    assert res.train_losses[-1] < res.initial_loss


def test_model_override_and_embedding_keep_initial_loss():
    data = _tiny_data()
    cfg = _tiny_config(max_epochs=0, pattern="AAAAAA", hidden=6, state=4)
    prep = prepare_splits(data, cfg)
    model = build_stack(
        "LRU",
        StackConfig(depth=6, n_unique=1),
        width=prep.width,
        n_classes=data.n_classes,
        hidden=6,
        state=4,
        rng=7,
    )
    tied = train_one(cfg, data, model=model)
    untied = train_one(cfg.replace(pattern="ABCDEF"), data, model=embed_periodic(model, 6))
    assert tied.initial_loss == untied.initial_loss  # bitwise


def test_full_loss_matches_direct_computation():
    from loopseq.stack import stack_loss

    data = _tiny_data(n=20)
    cfg = _tiny_config()
    prep = prepare_splits(data, cfg)
    model = build_stack(
        "LRU",
        StackConfig(depth=2, n_unique=1),
        width=prep.width,
        n_classes=2,
        hidden=6,
        state=4,
        rng=0,
    )
    direct = float(stack_loss(model, prep.val.series, prep.val.labels).data)
    assert full_loss(model, prep.val) == pytest.approx(direct, rel=1e-12)


def test_run_log_is_json_lines(tmp_path):
    path = tmp_path / "run.jsonl"
    res = train_one(_tiny_config(), _tiny_data(), log_path=path)
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert len(lines) == res.epochs_run + 2  # config header + epochs + summary
    assert lines[0]["config"]["arch"] == "LRU"
    assert lines[1]["epoch"] == 0
    assert lines[-1]["final"]["best_epoch"] == res.best_epoch


def test_prepare_splits_applies_concentration():
    data = _tiny_data(n=40, steps=16)  # width 2, low-dimensional tag
    prep = prepare_splits(data, _tiny_config(concentration=4))
    assert prep.width == 4
    assert prep.train.steps == 8  # ceil(16 * 2 / 4)
    sizes = (prep.train.n, prep.val.n, prep.test.n)
    assert sum(sizes) == 40 and sizes[1] == sizes[2] == 6


@pytest.mark.parametrize(
    "kw",
    [
        dict(pattern="ABBA"),
        dict(lr=0.0),
        dict(lr=-1e-3),
        dict(patience=-1),
        dict(clip_norm=0.0),
        dict(batch_size=0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        _tiny_config(**kw)


# --- grids -------------------------------------------------------------------------


def test_grid_selects_best_lr_and_skips_divergent():
    data = _tiny_data()
    base = _tiny_config(max_epochs=1, clip_norm=None)
    grid = grid_and_seeds(data, base, lrs=[1e-3, 1e5], seeds=[0, 1])
    assert isinstance(grid, GridResult)
    assert grid.chosen_lr == 1e-3
    assert np.isnan(grid.lr_val_means[1e5])
    assert len(grid.seed_test_accs) == 2
    assert grid.diverged_seeds == []
    assert grid.mean_test_acc == pytest.approx(np.mean(grid.seed_test_accs))
    assert grid.std_test_acc == pytest.approx(np.std(grid.seed_test_accs, ddof=0))


def test_grid_all_divergent_raises():
    data = _tiny_data()
    base = _tiny_config(max_epochs=1, clip_norm=None)
    with pytest.raises(AggregationError, match="diverged"):
        grid_and_seeds(data, base, lrs=[1e5, 1e6], seeds=[0])


def test_grid_rejects_empty_axes():
    with pytest.raises(ConfigError):
        grid_and_seeds(_tiny_data(), _tiny_config(), lrs=[], seeds=[0])


def test_grid_parallel_matches_serial():
    data = _tiny_data(n=32, steps=12)
    base = _tiny_config(max_epochs=1, batch_size=16)
    serial = grid_and_seeds(data, base, lrs=[1e-2], seeds=[0, 1], workers=None)
    parallel = grid_and_seeds(data, base, lrs=[1e-2], seeds=[0, 1], workers=2)
    assert serial.seed_test_accs == parallel.seed_test_accs
    assert serial.lr_val_means == parallel.lr_val_means
