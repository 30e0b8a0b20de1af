"""CLI: subcommand wiring, artifacts on disk, exit codes."""

import json

import pytest

from loopseq.cli import build_parser, main


def test_parser_lists_all_subcommands():
    parser = build_parser()
    sub = next(a for a in parser._actions if hasattr(a, "choices") and a.choices)
    assert set(sub.choices) == {"train", "grid", "verify", "reshape-stats", "report"}


def test_train_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(
        [
            "train",
            "--dataset",
            "synth",
            "--pattern",
            "2,1",
            "--hidden",
            "6",
            "--state",
            "4",
            "--max-epochs",
            "1",
            "--batch-size",
            "128",
            "--lr",
            "0.01",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    run = json.loads((out / "run.json").read_text())
    assert run["epochs_run"] == 1
    assert (out / "run.log.jsonl").exists()
    assert "best_val=" in capsys.readouterr().out


def test_grid_single_cell(tmp_path, capsys):
    out = tmp_path / "grid"
    code = main(
        [
            "grid",
            "--dataset",
            "synth",
            "--pattern",
            "2,1",
            "--hidden",
            "6",
            "--state",
            "4",
            "--max-epochs",
            "1",
            "--batch-size",
            "128",
            "--lrs",
            "0.01",
            "--seeds",
            "0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    grid = json.loads((out / "grid.json").read_text())
    assert grid["chosen_lr"] == 0.01
    assert "chosen lr=0.01" in capsys.readouterr().out


def test_grid_plan_file(tmp_path, capsys):
    plan = {
        "datasets": ["synth"],
        "archs": ["LRU"],
        "patterns": ["AAAAAA", "ABCDEF"],
        "supervisions": ["final"],
        "lrs": [0.01],
        "seeds": [0],
        "out_dir": str(tmp_path / "res"),
        "max_epochs": 1,
        "batch_size": 128,
        "hidden": 6,
        "state": 4,
        "synth": {"n": 60, "steps": 12, "width": 2, "n_classes": 2, "noise": 0.1, "seed": 0},
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    assert main(["grid", "--plan", str(plan_path)]) == 0
    assert (tmp_path / "res" / "results.csv").exists()
    assert (tmp_path / "res" / "results.md").exists()


def test_reshape_stats_canonical_instances(capsys, tmp_path):
    out = tmp_path / "stats.csv"
    code = main(["reshape-stats", "--dataset", "all", "--concentration", "8", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    lines = text.strip().splitlines()
    assert len(lines) == 7  # header + six corpora
    assert any("Ethanol\t1751\t2" in ln and "\t438\t" in ln for ln in lines)
    assert any("Heartbeat\t405\t61" in ln and "\t3089\t" in ln for ln in lines)
    assert out.exists() and out.read_text().count("\n") == 7


def test_reshape_stats_unknown_dataset():
    assert main(["reshape-stats", "--dataset", "Nope"]) == 2


def test_report_roundtrip(tmp_path, capsys):
    import csv

    from loopseq.report import CSV_COLUMNS

    res = tmp_path / "res"
    res.mkdir()
    row = {
        "dataset": "synth",
        "arch": "LRU",
        "pattern": "ABCDEF",
        "supervision": "final",
        "concentration": "1",
        "mean_acc": "0.750000",
        "std_acc": "0.010000",
        "n_params": "100",
        "seconds": "1.0",
        "lr": "0.001",
        "seed_accs": "0.74;0.75;0.76",
        "diverged_seeds": "",
        "config_hash": "abcd1234",
    }
    with open(res / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerow(row)
    assert main(["report", "--results", str(res)]) == 0
    assert "75.00" in (res / "results.md").read_text()
    assert main(["report", "--results", str(tmp_path / "nowhere")]) == 2


def test_missing_dataset_is_actionable(tmp_path, capsys):
    code = main(
        ["train", "--dataset", "Heartbeat", "--data-dir", str(tmp_path), "--max-epochs", "1"]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "Heartbeat.zip" in err and "timeseriesclassification.com" in err


def test_verify_fast_passes(tmp_path, capsys):
    out = tmp_path / "audit.json"
    code = main(["verify", "--fast", "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["passed"] is True
    text = capsys.readouterr().out
    assert "checks passed" in text and "[PASS]" in text
