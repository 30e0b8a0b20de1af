"""Command-line entry point.

Subcommands:

* ``train``         — one training run (one config, one seed)
* ``grid``          — a learning-rate x seed grid for one cell, or a
                      full plan file of cells (``--plan``)
* ``verify``        — run the audit suite and report pass/fail
* ``reshape-stats`` — print the sequence-reshaping law for the
                      canonical corpus shapes
* ``report``        — re-render markdown from a results directory

Results are CSV/JSON/markdown files; logs go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .data import CANONICAL, load_named, synth_sine_task
from .errors import LoopseqError
from .report import load_plan, render_report, run_plan
from .reshape import make_spec
from .train import TrainConfig, grid_and_seeds, train_one
from .verify import run_all

log = logging.getLogger(__name__)


def _add_cell_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="synth", help="'synth' or a canonical corpus name")
    p.add_argument("--arch", default="LRU", help="LRU, S5, LinOSS, or LrcSSM")
    p.add_argument("--pattern", default="AAAAAA", help="block-sharing pattern, e.g. ABCABC or '6,3'")
    p.add_argument("--supervision", choices=("final", "block"), default="final")
    p.add_argument("--concentration", type=int, default=1)
    p.add_argument("--regime", choices=("auto", "identity", "low_dim_concat", "high_dim_flatten"), default="auto")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--clip-norm", type=float, default=1.0, help="global gradient-norm clip; 0 disables")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--state", type=int, default=64)
    p.add_argument("--data-dir", default="data")
    p.add_argument("--pad-ragged", action="store_true", help="zero pad ragged series instead of rejecting")


def _resolve_dataset(args):
    if args.dataset == "synth":
        return synth_sine_task()
    return load_named(args.dataset, args.data_dir, pad_ragged=args.pad_ragged)


def _config_from(args, lr: float, seed: int) -> TrainConfig:
    return TrainConfig(
        arch=args.arch,
        pattern=args.pattern,
        supervision=args.supervision,
        concentration=args.concentration,
        regime=args.regime,
        lr=lr,
        seed=seed,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        clip_norm=args.clip_norm if args.clip_norm > 0 else None,
        hidden=args.hidden,
        state=args.state,
    )


def _cmd_train(args) -> int:
    dataset = _resolve_dataset(args)
    out_dir = Path(args.out) if args.out else None
    log_path = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "run.log.jsonl"
    result = train_one(_config_from(args, args.lr, args.seed), dataset, log_path=log_path)
    if out_dir:
        with open(out_dir / "run.json", "w") as fh:
            json.dump(result.to_json(), fh, indent=2)
            fh.write("\n")
    status = "diverged" if result.diverged else "ok"
    print(
        f"{args.dataset}/{args.arch}/{args.pattern}/{args.supervision} "
        f"lr={args.lr} seed={args.seed}: {status}, epochs={result.epochs_run}, "
        f"best_val={result.best_val_acc:.4f} test_at_best={result.test_acc_at_best:.4f} "
        f"params={result.n_params}"
    )
    return 0


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _cmd_grid(args) -> int:
    if args.plan:
        plan = load_plan(args.plan)
        csv_path = run_plan(plan, workers=args.workers)
        print(f"wrote {csv_path} and {csv_path.with_name('results.md')}")
        return 0
    dataset = _resolve_dataset(args)
    base = _config_from(args, lr=_parse_floats(args.lrs)[0], seed=0)
    grid = grid_and_seeds(
        dataset, base, lrs=_parse_floats(args.lrs), seeds=_parse_ints(args.seeds), workers=args.workers
    )
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "grid.json", "w") as fh:
            json.dump(grid.to_json(), fh, indent=2)
            fh.write("\n")
    print(
        f"chosen lr={grid.chosen_lr}: test acc {grid.mean_test_acc:.4f} ± {grid.std_test_acc:.4f} "
        f"over seeds {grid.seeds}"
        + (f" (diverged: {grid.diverged_seeds})" if grid.diverged_seeds else "")
    )
    return 0


def _cmd_verify(args) -> int:
    report = run_all(fast=args.fast)
    print(report.to_text())
    if args.out:
        report.write_json(args.out)
    return 0 if report.passed else 1


def _cmd_reshape_stats(args) -> int:
    names = list(CANONICAL) if args.dataset == "all" else [args.dataset]
    for name in names:
        if name not in CANONICAL:
            raise LoopseqError(f"unknown dataset {name!r}; expected 'all' or one of {sorted(CANONICAL)}")
    rows = []
    for name in names:
        meta = CANONICAL[name]
        for c in _parse_ints(args.concentration):
            spec = make_spec(meta["steps"], meta["width"], c, dim_tag=meta["tag"])
            rows.append(
                {
                    "dataset": name,
                    "steps": meta["steps"],
                    "width": meta["width"],
                    "dim_tag": meta["tag"],
                    "concentration": c,
                    "regime": spec.regime,
                    "rows": spec.rows,
                    "pad": spec.pad_count,
                }
            )
    header = list(rows[0])
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(row[k]) for k in header))
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
    return 0


def _cmd_report(args) -> int:
    path = render_report(args.results, stderr_aware=args.stderr_aware)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loopseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="one training run")
    _add_cell_flags(p_train)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", default=None, help="directory for run.json and run.log.jsonl")
    p_train.set_defaults(fn=_cmd_train)

    p_grid = sub.add_parser("grid", help="lr x seed grid, or a full plan file")
    _add_cell_flags(p_grid)
    p_grid.add_argument("--lrs", default="0.001,0.003", help="comma-separated learning rates")
    p_grid.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p_grid.add_argument("--plan", default=None, help="JSON plan file; overrides the cell flags")
    p_grid.add_argument("--workers", type=int, default=None, help="worker processes for cells")
    p_grid.add_argument("--out", default=None, help="directory for grid.json")
    p_grid.set_defaults(fn=_cmd_grid)

    p_verify = sub.add_parser("verify", help="run the audit suite")
    p_verify.add_argument("--fast", action="store_true", help="smaller containment batches")
    p_verify.add_argument("--out", default=None, help="write the JSON audit report here")
    p_verify.set_defaults(fn=_cmd_verify)

    p_stats = sub.add_parser("reshape-stats", help="sequence-reshaping law per corpus shape")
    p_stats.add_argument("--dataset", default="all")
    p_stats.add_argument("--concentration", default="1,8,16", help="comma-separated factors")
    p_stats.add_argument("--out", default=None, help="optional CSV output path")
    p_stats.set_defaults(fn=_cmd_reshape_stats)

    p_report = sub.add_parser("report", help="re-render markdown from results.csv")
    p_report.add_argument("--results", required=True, help="directory containing results.csv")
    p_report.add_argument(
        "--stderr-aware",
        action="store_true",
        help="add a Welch-test p-value column (diagnostic only)",
    )
    p_report.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LoopseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
