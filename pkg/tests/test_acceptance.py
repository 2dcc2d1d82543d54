"""Acceptance criteria AC-1..AC-13 on the default map, one pass/fail line each."""

import pytest

from almost_anosov.acceptance import run_acceptance

AC_LINES: list[str] = []
IDS = [f"AC-{i}" for i in range(1, 14)]


@pytest.fixture(scope="module")
def results(fmap):
    res = {r.id: r for r in run_acceptance(fmap)}
    # collected by the terminal-summary hook in conftest so the lines show without -s
    AC_LINES.extend(res[key].line() for key in IDS)
    return res


def test_all_criteria_reported(results):
    assert sorted(results, key=lambda k: int(k[3:])) == IDS


@pytest.mark.parametrize("ac_id", IDS)
def test_criterion(results, ac_id):
    r = results[ac_id]
    print(r.line())
    assert r.passed, r.line()
