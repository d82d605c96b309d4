"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Every threshold is pinned below and checked against the values the library
uses, so a silent change to a tolerance fails here.
"""
import sys

import pytest

from condexp import acceptance as acc

PINNED = {
    "C1_INSTANCES": 200, "C1_MAX_ATOMS": 64, "C1_MAX_FIELDS": 5, "C1_STEPS": 10_000,
    "C1_TOL": 1e-10, "C1_SECONDS": 30.0, "C1_SEED": 11,
    "C2_TOL": 1e-10, "C2_ZERO_TOL": 1e-12, "C2_TWO_POINT": 400, "C2_GAUSS": 100,
    "C2_GAUSS_N": 41, "C2_SEED": 22,
    "C3_DISC_N": 400, "C3_DEEP_TOL": 5e-3, "C3_INDEP_MARGIN": 0.05,
    "C4_RHOS": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9), "C4_MAX_N": 20, "C4_TOL": 1e-12,
    "C5_RHOS": tuple(round(0.1 * i, 1) for i in range(-9, 10)), "C5_GRIDS": (51, 101, 201),
    "C5_BOUND": 0.05, "C5_MONO_SLACK": 1e-12,
    "C6_ENUM_BITS": tuple(range(2, 17)), "C6_N": 100_000, "C6_K": 3, "C6_SEED": 20240611,
    "C7_SPLITS": 200, "C7_SCHEDULES": 50, "C7_TOL": 1e-12, "C7_SEED": 77,
    "C8_DIMS": tuple(range(2, 21)), "C8_RATIO": 10.0, "C8_SECONDS": 60.0,
    "C9_TOL": 1e-12,
}

_cache = {}


def _result(k):
    if k not in _cache:
        if k == 9:
            _cache[9] = acc.criterion_9(_result(1).trajectories + _result(4).trajectories)
        else:
            _cache[k] = acc.CRITERIA[k]()
    return _cache[k]


@pytest.mark.parametrize("name", sorted(PINNED))
def test_tolerances_pinned(name):
    assert getattr(acc, name) == PINNED[name]


@pytest.mark.parametrize("k", sorted(acc.CRITERIA))
def test_criterion(k, capsys):
    r = _result(k)
    with capsys.disabled():
        print(f"\n{r.line()}  ({r.seconds:.2f}s)")
    assert r.passed, r.line()


def test_criterion_1_time_budget():
    assert _result(1).seconds < PINNED["C1_SECONDS"]


def test_criterion_8_time_budget():
    assert _result(8).seconds < PINNED["C8_SECONDS"]


if __name__ == "__main__":
    results = acc.run_all()
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
