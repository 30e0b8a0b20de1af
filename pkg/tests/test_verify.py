"""Audit suite: the checks pass on the real code and fail on planted defects."""

import json

import numpy as np
import pytest

from loopseq.verify import (
    AuditReport,
    CheckResult,
    _timed,
    audit_containment,
    audit_gradients,
    audit_param_linear,
    run_all,
)


def test_fast_bundle_all_pass(tmp_path):
    report = run_all(fast=True)
    assert report.passed, report.to_text()
    text = report.to_text()
    assert text.count("[PASS]") == len(report.results)
    assert "FAIL" not in text.replace("FAILED", "")
    path = tmp_path / "audit.json"
    report.write_json(path)
    back = json.loads(path.read_text())
    assert back["passed"] is True
    assert len(back["results"]) == len(report.results)


def test_containment_small_config_passes():
    results = audit_containment(seeds=2, n_inputs=6, steps=10, hidden=8, state=8)
    names = [r.name for r in results]
    assert sum(n.startswith("containment/") for n in names) == len(names)
    assert "containment/guards" in names
    for r in results:
        assert r.passed, r.line()
    # bit-equality means literal zero error on the equality checks
    for r in results:
        if r.name != "containment/guards":
            assert r.max_error == 0.0


def test_param_audit_exact_affine_and_band():
    results = audit_param_linear()
    assert len(results) == 4
    for r in results:
        assert r.passed, r.line()
        assert r.max_error == 0.0
    by_name = {r.name: r for r in results}
    heartbeat = by_name["params/LRU"].detail["Heartbeat"]
    assert heartbeat["counts"] == {1: 29122, 2: 54146, 3: 79170, 6: 154242}
    assert heartbeat["ratio"] == pytest.approx(154242 / 29122, abs=1e-4)


def test_gradient_audits_pass():
    results = audit_gradients()
    assert len(results) == 4 * 2 * 3 + 1
    for r in results:
        assert r.passed, r.line()
    detector = [r for r in results if r.name == "gradients/detector"][0]
    assert detector.max_error > 1.0  # it measured the planted sign flip


def test_crashing_check_reports_failure():
    def boom():
        raise ValueError("planted")

    result = _timed("unit/crash", boom)
    assert not result.passed
    assert result.max_error == float("inf")
    assert "planted" in result.detail["error"]
    assert "[FAIL]" in result.line()


def test_report_counts_failures():
    ok = CheckResult("a", True, 0.0, 0.01, {})
    bad = CheckResult("b", False, 2.0, 0.01, {})
    report = AuditReport([ok, ok, bad])
    assert not report.passed
    text = report.to_text()
    assert "2/3 checks passed" in text and "(1 FAILED)" in text


def test_containment_has_teeth():
    # the guards check carries the sensitivity probe: its measured error
    # is the logit change from a 1e-9 parameter nudge, which must be nonzero
    guards = [r for r in audit_containment(seeds=1, n_inputs=4, steps=8) if "guards" in r.name][0]
    assert guards.passed and guards.max_error > 0.0


def test_check_result_line_format():
    r = CheckResult("x/y", True, 1.25e-9, 0.5, {})
    line = r.line()
    assert line.startswith("[PASS] x/y")
    assert "1.250e-09" in line and "0.50s" in line
