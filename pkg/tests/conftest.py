"""Prints one pass/fail line per acceptance criterion after the run."""

import re

_results = {}

_TITLES = {
    1: "GCN gradient correctness (20 seeded instances, rel err < 1e-4)",
    2: "Smoothing-solve matches truncated Neumann series (1e-8)",
    3: "Probability invariants on 1000 calibration instances",
    4: "EMA contraction at geometric rate",
    5: "Ablation ordering on the synthetic benchmark",
    6: "Byte-identical adaptation runs",
    7: "Degenerate-input suite",
}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py.*criterion_(\d+)", report.nodeid)
    if match and report.when == "call":
        num = int(match.group(1))
        passed = report.outcome == "passed"
        _results[num] = _results.get(num, True) and passed


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_results):
        status = "PASS" if _results[num] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {num}: {status} - {_TITLES.get(num, '')}")
    terminalreporter.write_line(
        "ACCEPTANCE 8: covered by the fixture-exporter package test suite (secondary)"
    )
