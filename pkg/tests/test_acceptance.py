"""Acceptance criteria 1-12, one test each.

Every test writes its report lines plus a one-line verdict straight to the
terminal (bypassing capture), so a plain ``pytest -v`` run shows the
pass/fail table inline.
"""

import subprocess
import sys
import time

import pytest

from lasa_lan import verify


def _judge(capsys, number, level="full"):
    checks = verify.CRITERIA[number](level)
    ok = verify.all_passed(checks)
    with capsys.disabled():
        print()
        for c in checks:
            print(c.line())
        print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}")
    return checks


@pytest.mark.parametrize("number", [1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12])
def test_criterion(number, capsys):
    checks = _judge(capsys, number)
    assert all(c.passed for c in checks), [c.line() for c in checks if not c.passed]


@pytest.mark.slow
def test_criterion_9_overfit(capsys):
    checks = _judge(capsys, 9)
    assert checks[0].passed, checks[0].line()


def test_fast_level_under_five_minutes(capsys):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "lasa_lan", "verify", "--level", "fast"],
                          capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    ok = proc.returncode == 0 and elapsed < 300
    with capsys.disabled():
        print()
        print(proc.stdout.splitlines()[-1] if proc.stdout else proc.stderr)
        print(f"fast verify: exit {proc.returncode} in {elapsed:.0f} s: {'PASS' if ok else 'FAIL'}")
    assert proc.returncode == 0, proc.stdout
    assert elapsed < 300
    assert "measured 256.0" in proc.stdout
