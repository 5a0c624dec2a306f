"""Acceptance criteria at full scale.

Each test prints one PASS/FAIL line with the measured value, the tolerance
and the wall time.  Run on its own with ``pytest tests/test_acceptance.py -s``
or through ``python -m tests.test_acceptance``.
"""
import pytest

from collapsesim.harness.verify import CHECKS, SCALES

FULL = SCALES["full"]

# (number, title, verify check, runtime budget in seconds or None)
CRITERIA = [
    (1, "jump-probability completeness", "completeness", 5),
    (2, "Born rule, GRW", "born_grw", 120),
    (3, "Born rule, CSL", "born_csl", 900),
    (4, "amplification", "amplification", 60),
    (5, "CSL norm contract", "csl_norm", 60),
    (6, "Lindblad-oracle agreement", "lindblad", 600),
    (7, "martingale / no-signalling", "martingale", None),
    (8, "unitary baseline", "unitary_baseline", None),
    (9, "determinism", "determinism", None),
    (10, "units helper", "units", None),
]

# invariants checked alongside the numbered criteria
INVARIANTS = [
    ("I1", "decay-rate brute-force calibration", "calibration", None),
    ("I2", "GRW-CSL coherence agreement", "grw_csl_agreement", None),
    ("I3", "CSL localization of a broad packet", "localization", None),
]


def run_criterion(number, title, check, budget):
    result = CHECKS[check](FULL, None)
    within = budget is None or result.seconds < budget
    verdict = "PASS" if result.passed and within else "FAIL"
    limit = "" if budget is None else f" budget {budget}s"
    line = (f"criterion {number:>2} {verdict} {title}: measured={result.measured:.6g} "
            f"tolerance={result.tolerance:.6g} ({result.detail}) "
            f"[{result.seconds:.1f}s{limit}]")
    return result, within, line


@pytest.mark.slow
@pytest.mark.parametrize("number, title, check, budget", CRITERIA,
                         ids=[c[2] for c in CRITERIA])
def test_criterion(number, title, check, budget, capsys):
    result, within, line = run_criterion(number, title, check, budget)
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert result.passed, line
    assert within, line


@pytest.mark.slow
@pytest.mark.parametrize("number, title, check, budget", INVARIANTS,
                         ids=[c[2] for c in INVARIANTS])
def test_invariant(number, title, check, budget, capsys):
    result, _, line = run_criterion(number, title, check, budget)
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert result.passed, line


if __name__ == "__main__":
    import sys
    ok = True
    for spec in CRITERIA + INVARIANTS:
        res, within, line = run_criterion(*spec)
        print(line, flush=True)
        ok &= res.passed and within
    sys.exit(0 if ok else 1)
