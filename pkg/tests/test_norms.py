import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_mup.exceptions import ContractViolation, ConvergenceError
from spectral_mup.linalg import RngStream
from spectral_mup.norms import (
    NormEstimate,
    NormMethod,
    bai_yin_estimate,
    concat_rows,
    expected_operator_norm,
    spectral_norm,
)


def test_spectral_norm_rank_one():
    u, v = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
    # ||u v^T|| = ||u|| ||v|| = 3 * 5
    for method in ("power", "svd"):
        assert spectral_norm(np.outer(u, v), method=method).value == pytest.approx(15.0, rel=1e-10)


def test_spectral_norm_zero_matrix():
    est = spectral_norm(np.zeros((4, 3)))
    assert est.value == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**31))
def test_power_matches_svd(rows, cols, seed):
    a = RngStream(seed, 1).normal((rows, cols))
    p = spectral_norm(a).value
    s = spectral_norm(a, method="svd").value
    assert p == pytest.approx(s, rel=1e-8)


def test_power_iteration_reports_nonconvergence():
    a = RngStream(0, 0).normal((60, 60))
    with pytest.raises(ConvergenceError) as ei:
        spectral_norm(a, tol=1e-15, max_iters=1, block=1)
    assert ei.value.iterations == 1


def test_unknown_method():
    with pytest.raises(ContractViolation):
        spectral_norm(np.eye(2), method="qr")


def test_expected_norm_of_orthogonal_matrix_is_one():
    q, _ = np.linalg.qr(RngStream(2, 0).normal((20, 20)))
    est = expected_operator_norm(q, RngStream(2, 1), 300)
    assert est.value == pytest.approx(1.0, abs=1e-12)
    assert est.method is NormMethod.MONTE_CARLO and est.samples_or_iters == 300


def test_expected_norm_rank_one_oracle():
    # ||u v^T x|| / ||x|| = ||u|| |v.x| / ||x||; for x ~ N(0, I_d) with unit v this has
    # mean ||u|| * E|x_1| / ||x||, and E|x_1|/||x|| = Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2)).
    d = 30
    u = np.full(5, 2.0)
    v = np.zeros(d)
    v[0] = 1.0
    oracle = np.linalg.norm(u) * math.exp(math.lgamma(d / 2) - math.lgamma((d + 1) / 2)) / math.sqrt(math.pi)
    est = expected_operator_norm(np.outer(u, v), RngStream(3, 0), 20000)
    assert abs(est.value - oracle) < 4 * est.std_error


def test_expected_norm_is_a_seminorm_on_shared_samples():
    rng = RngStream(4, 0)
    a, b = rng.normal((8, 12)), rng.normal((8, 12))
    x = RngStream(4, 1).normal((12, 500))
    na = expected_operator_norm(a, None, samples=x).value
    nb = expected_operator_norm(b, None, samples=x).value
    nab = expected_operator_norm(a + b, None, samples=x).value
    assert nab <= na + nb + 1e-12
    assert expected_operator_norm(-3 * a, None, samples=x).value == pytest.approx(3 * na, rel=1e-12)


def test_expected_norm_chunking_is_deterministic():
    a = RngStream(9, 0).normal((10, 10))
    e1 = expected_operator_norm(a, RngStream(9, 1), 600)
    e2 = expected_operator_norm(a, RngStream(9, 1), 600)
    assert e1 == e2


def test_expected_norm_bad_samples():
    with pytest.raises(ContractViolation):
        expected_operator_norm(np.eye(3), None, samples=np.ones((2, 5)))
    with pytest.raises(ContractViolation):
        expected_operator_norm(np.eye(3), RngStream(0), 1)


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_concat_rows_scales_spectral_norm(r):
    a = RngStream(r, 0).normal((7, 4))
    c = concat_rows(a, r)
    assert c.shape == (7 * r, 4)
    np.testing.assert_array_equal(c[7 : 14] if r > 1 else c, a)
    assert spectral_norm(c, method="svd").value == pytest.approx(math.sqrt(r) * spectral_norm(a, method="svd").value)


def test_concat_rows_contract():
    with pytest.raises(ContractViolation):
        concat_rows(np.eye(2), 0)


def test_bai_yin_values():
    assert bai_yin_estimate(1024, 1024, 1.0) == pytest.approx(64.0)
    assert bai_yin_estimate(96, 1152, 1 / math.sqrt(1152)) == pytest.approx(1 + math.sqrt(96 / 1152))


def test_norm_estimate_invariants():
    with pytest.raises(ContractViolation):
        NormEstimate(-1.0, NormMethod.DENSE_SVD, 1)
    with pytest.raises(ContractViolation):
        NormEstimate(1.0, NormMethod.POWER_ITERATION, 3, std_error=0.1)
    assert float(NormEstimate(2.0, NormMethod.MONTE_CARLO, 3, 0.1)) == 2.0


def test_gaussian_spectral_norm_near_two_sqrt_n():
    # [PAPER] ||A|| = 2 sqrt(n) for square i.i.d. unit Gaussians
    a = RngStream(11, 0).normal((400, 400))
    assert spectral_norm(a).value / (2 * math.sqrt(400)) == pytest.approx(1.0, abs=0.05)
