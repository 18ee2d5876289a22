"""End-to-end acceptance criteria; one pass/fail line per criterion.

The lines are printed by each test and repeated in the terminal summary so
they show up without ``-s``.
"""

import pytest

from eland.acceptance import CRITERIA

LINES = {}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    res = CRITERIA[number]()
    LINES[number] = res.line()
    print(res.line())
    for note in res.notes:
        print("    note:", note)
    assert res.passed, res.line()
