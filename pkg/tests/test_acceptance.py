"""The ten acceptance criteria, each at its stated tolerance and time budget.

The suite runs once per session (criterion 10 repeats it to compare hashes);
one PASS/FAIL line per criterion is printed in the terminal summary.
"""
import pytest

from singflow.acceptance import verify_all

LINES = []


@pytest.fixture(scope="session")
def results():
    def report(r):
        LINES.append(r.line())
        print(r.line(), flush=True)

    return {r.number: r for r in verify_all(seed=0, report=report)}


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(results, number):
    r = results[number]
    assert r.ok, r.line()
