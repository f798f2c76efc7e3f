"""The eleven acceptance criteria at their stated sizes and tolerances."""
import pytest

from robustdmb.acceptance import CRITERIA, run_criterion


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, record_line):
    res = run_criterion(number)
    line = res.line()
    print(line)
    record_line(line)
    assert res.passed, line
