import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_mup.exceptions import ContractViolation, ConvergenceError
from spectral_mup.linalg import (
    RngStream,
    as_matrix,
    fit_loglog_slope,
    gaussian_matrix,
    matmul,
    rms,
    svd_max_singular,
)


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ContractViolation):
        as_matrix(np.ones(3))
    with pytest.raises(ContractViolation):
        as_matrix(np.ones((0, 3)))
    with pytest.raises(ContractViolation):
        as_matrix([[1.0, np.nan]])
    assert as_matrix([[1, 2]]).dtype == np.float64


def test_rng_stream_replays_and_children_differ():
    a = RngStream(5, 9).normal(6)
    b = RngStream(5, 9).normal(6)
    np.testing.assert_array_equal(a, b)
    c1 = RngStream(5, 9).child(0).normal(6)
    c2 = RngStream(5, 9).child(1).normal(6)
    assert not np.allclose(c1, c2)
    assert not np.allclose(a, RngStream(6, 9).normal(6))


def test_child_is_path_addressed():
    s = RngStream(3, 1)
    np.testing.assert_array_equal(s.child(2, 7).normal(4), RngStream(3, 1).child(2, 7).normal(4))


def test_gaussian_matrix_zero_std_is_zero(rng):
    assert not np.any(gaussian_matrix(rng, 4, 5, 0.0))


def test_gaussian_matrix_std(rng):
    w = gaussian_matrix(rng, 400, 400, 0.5)
    assert abs(w.std() - 0.5) < 0.01


def test_matmul_dimension_check():
    with pytest.raises(ContractViolation):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    np.testing.assert_array_equal(matmul(np.eye(2), [[1.0], [2.0]]), [[1.0], [2.0]])


def test_svd_max_singular_diagonal():
    assert svd_max_singular(np.diag([3.0, -7.0, 1.0])) == pytest.approx(7.0, rel=1e-15)


def test_svd_failure_is_convergence_error(monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("no")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(ConvergenceError) as ei:
        svd_max_singular(np.ones((3, 5)))
    assert ei.value.iterations == 50


def test_fit_loglog_slope_exact_power_law():
    xs = [1, 2, 4, 8]
    slope, intercept, r2 = fit_loglog_slope(xs, [3 * x**1.5 for x in xs])
    assert slope == pytest.approx(1.5, abs=1e-12)
    assert intercept == pytest.approx(math.log(3), abs=1e-12)
    assert r2 == pytest.approx(1.0)


def test_fit_loglog_slope_constant_has_zero_slope():
    slope, _, r2 = fit_loglog_slope([1, 2, 3], [5, 5, 5])
    assert slope == 0 and r2 == 1.0


def test_fit_loglog_slope_contract():
    with pytest.raises(ContractViolation):
        fit_loglog_slope([1, 2], [1, 2])
    with pytest.raises(ContractViolation):
        fit_loglog_slope([1, 2, 3], [1, 0, 2])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_rms_matches_definition(xs):
    assert rms(np.array(xs)) == pytest.approx(math.sqrt(sum(x * x for x in xs) / len(xs)), rel=1e-12, abs=1e-300)
