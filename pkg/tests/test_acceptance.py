"""Acceptance criteria 1-11 at their stated tolerances.

Run ``pytest tests/test_acceptance.py -s`` to see one pass/fail line per criterion.
"""
import pytest

from gfmsim.verify import CRITERIA, NAMES, VerifyContext, run_suite


@pytest.fixture(scope="module")
def results():
    res = run_suite()
    for r in res:
        print(r.line())
    return {r.number: r for r in res}


def test_suite_covers_every_criterion(results):
    assert sorted(results) == list(range(1, 12))
    assert len(CRITERIA) == len(NAMES) == 11


@pytest.mark.parametrize("number", range(1, 12), ids=[f"c{n:02d}" for n in range(1, 12)])
def test_criterion(results, number):
    r = results[number]
    assert r.passed, r.line()


def test_single_criterion_matches_suite(results):
    alone = CRITERIA[0](VerifyContext())
    assert alone.passed == results[1].passed
