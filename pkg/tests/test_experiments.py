import math

import pytest

from spectral_mup.exceptions import ContractViolation
from spectral_mup.harness.experiments import (
    NormRow,
    batch_sequences,
    batch_size_tokens,
    ratio_monotone,
    run_depth_experiment,
    run_norm_experiment,
)


def test_norm_experiment_small():
    rows = run_norm_experiment(96, [1, 2, 4], samples=400)
    assert [r.r for r in rows] == [1, 2, 4]
    for row in rows:
        # Bai-Yin edge of the (n/r) x n block, times sqrt(r) for the replication
        assert row.bai_yin == pytest.approx(math.sqrt(row.r) * (1 + math.sqrt(1 / row.r)))
        assert row.spectral == pytest.approx(1 + math.sqrt(row.r), rel=0.2)
        assert row.expected == pytest.approx(1.0, abs=0.1)
    assert ratio_monotone(rows)


def test_norm_experiment_zero_std():
    rows = run_norm_experiment(12, [1, 3], std_rule=0, samples=10)
    assert all(r.spectral == 0 and r.expected == 0 for r in rows)


def test_norm_experiment_needs_divisible_width():
    with pytest.raises(ContractViolation):
        run_norm_experiment(10, [3])


def test_ratio_monotone_detects_a_drop():
    rows = [NormRow(1, 8, 2.0, 1.0, 1e-4, 0.1, 2.0), NormRow(2, 8, 1.5, 1.0, 1e-4, 0.1, 2.4), NormRow(3, 8, 3.0, 1.0, 1e-4, 0.1, 2.7)]
    assert not ratio_monotone(rows)


def test_depth_zero_beta_is_identity():
    rows = run_depth_experiment(32, [2, 8], "constant", 0.0)
    assert all(r.gain == 1.0 for r in rows)


def test_depth_modes_small():
    cp = run_depth_experiment(64, [2, 8, 32], "complete-p", 1.0)
    const = run_depth_experiment(64, [2, 8, 32], "constant", 0.5)
    assert all(0.5 <= r.gain <= 2.0 for r in cp)
    assert [r.beta for r in cp] == [0.5, 0.125, 1 / 32]
    assert const[-1].gain > const[0].gain


def test_batch_size_examples():
    assert batch_size_tokens(1e6) == pytest.approx(0.733)
    assert batch_size_tokens(8.062e8) == pytest.approx(20.8126, abs=1e-4)
    assert batch_size_tokens(4e6) == pytest.approx(2 * batch_size_tokens(1e6))
    assert batch_sequences(1e6) == 1
    assert batch_sequences(8.062e8) == 21
    with pytest.raises(ContractViolation):
        batch_size_tokens(0)
