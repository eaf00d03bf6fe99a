import pytest

from tweezer_transport.invariants import CHECKS, harmonic_period_errors, run_all


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_invariant_holds(name):
    (result,) = run_all([name])
    print(result.line())
    assert result.passed, result.line()


def test_period_errors_shrink():
    errs = harmonic_period_errors((20, 40))
    assert errs[1] < errs[0] / 3
