"""Every acceptance criterion at its stated tolerance, one pass/fail line each.

These run the full experiments and take most of an hour; deselect with
``-m "not slow"``.  Criteria share one context so that the determinism check
can compare against the coordinate-check records produced for criterion 7.
"""

import pytest

from spectral_mup.acceptance import CRITERIA, run_criterion

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ctx():
    return {}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, ctx, capsys):
    result = run_criterion(number, ctx)
    with capsys.disabled():
        print("\n" + result.line(), flush=True)
    assert result.passed, result.line()
