import math
import warnings

import numpy as np
import pytest

from spectral_mup.exceptions import ContractViolation
from spectral_mup.harness.coordcheck import (
    CoordCheckRecord,
    Quantity,
    ScaleVar,
    effective_operator,
    medians_by_point,
    run_coord_check,
    scaled_config,
    verdict_from_records,
)
from spectral_mup.model import ModelConfig
from spectral_mup.parameterization import Parameterization, Role

SMALL = ModelConfig(n=32, L=2, H=4, kv_heads=4, vocab=13, seq_len=8, param=Parameterization(base_lr=0.05))


def synthetic(values_by_point, q=Quantity.SPEC_DW, role=Role.ATTN_KV, seeds=(1, 2)):
    return [CoordCheckRecord(s, 1, 0, role, ScaleVar.REPS, p, q, v) for p, v in values_by_point.items() for s in seeds]


def test_constant_records_pass():
    (v,) = verdict_from_records(synthetic({1: 2.0, 2: 2.0, 4: 2.0}))
    assert v.measured_slope == pytest.approx(0.0, abs=1e-12) and v.passed


def test_linear_records_fail():
    (v,) = verdict_from_records(synthetic({n: 0.1 * n for n in (64, 128, 256)}))
    assert v.measured_slope == pytest.approx(1.0) and not v.passed


def test_gqa_ratio_records_fail():
    # closed-form least squares on log((1 + sqrt r) / sqrt r) at r = 1, 4, 16
    vals = {r: (1 + math.sqrt(r)) / math.sqrt(r) for r in (1, 4, 16)}
    (v,) = verdict_from_records(synthetic(vals))
    assert v.measured_slope == pytest.approx(-0.16951797627815943, abs=1e-12)
    assert not v.passed


def test_verdict_invariant_and_custom_expectation():
    (v,) = verdict_from_records(synthetic({n: n**0.5 for n in (4, 16, 64)}), {Quantity.SPEC_DW: 0.5}, 0.01)
    assert v.passed == (abs(v.measured_slope - v.expected_exponent) <= v.tolerance)
    assert v.passed


def test_median_over_seeds_resists_outliers():
    recs = synthetic({1: 1.0, 2: 1.0, 4: 1.0}, seeds=(1, 2, 3))
    recs.append(CoordCheckRecord(4, 1, 0, Role.ATTN_KV, ScaleVar.REPS, 4, Quantity.SPEC_DW, 1e6))
    (v,) = verdict_from_records(recs)
    assert v.passed


def test_insufficient_points_warns_and_fails():
    with pytest.warns(UserWarning):
        (v,) = verdict_from_records(synthetic({1: 1.0, 2: 1.0}))
    assert not v.passed and v.note


def test_every_pair_gets_a_verdict():
    recs = synthetic({1: 1.0, 2: 1.0, 4: 1.0}) + synthetic({1: 1.0, 2: 2.0, 4: 4.0}, Quantity.ACT_H, Role.FFN_IN)
    verdicts = verdict_from_records(recs)
    assert {(v.quantity, v.role) for v in verdicts} == {(Quantity.SPEC_DW, Role.ATTN_KV), (Quantity.ACT_H, Role.FFN_IN)}


def test_scaled_config():
    assert scaled_config(SMALL, ScaleVar.REPS, 2).kv_heads == 2
    assert scaled_config(SMALL, ScaleVar.WIDTH, 64).n == 64
    assert scaled_config(SMALL, ScaleVar.DEPTH, 5).L == 5
    with pytest.raises(ContractViolation):
        scaled_config(SMALL, ScaleVar.REPS, 3)


def test_effective_operator_replicates_only_kv():
    w = np.ones((2, 3))
    assert effective_operator(w, Role.ATTN_KV, 3).shape == (6, 3)
    assert effective_operator(w, Role.ATTN_Q, 3) is w


def test_run_is_deterministic_and_complete():
    a = list(run_coord_check(SMALL, "Reps", [1, 2], [1], 2, exp_samples=20))
    b = list(run_coord_check(SMALL, "Reps", [1, 2], [1], 2, exp_samples=20))
    assert a == b
    assert {r.quantity for r in a} == set(Quantity)
    assert {r.step for r in a if r.quantity is Quantity.SPEC_DW} == {1, 2}
    assert {r.step for r in a if r.quantity is Quantity.SPEC_W} == {0, 1, 2}
    assert {r.step for r in a if r.quantity is Quantity.ACT_DH} == {1, 2}


def test_kv_views():
    kw = dict(roles=[Role.ATTN_KV], quantities=[Quantity.EXP_W, Quantity.SPEC_W], exp_samples=50)
    stored = list(run_coord_check(SMALL, "Reps", [4], [1], 2, kv_view="stored", **kw))
    mixed = list(run_coord_check(SMALL, "Reps", [4], [1], 2, kv_view="mixed", **kw))
    rep = list(run_coord_check(SMALL, "Reps", [4], [1], 2, kv_view="replicated", **kw))
    spec = {name: [r.value for r in recs if r.quantity is Quantity.SPEC_W]
            for name, recs in (("stored", stored), ("mixed", mixed), ("rep", rep))}
    np.testing.assert_allclose(spec["stored"], spec["mixed"])
    np.testing.assert_allclose(np.array(spec["rep"]), 2 * np.array(spec["stored"]), rtol=1e-10)


def test_divergence_marks_nan_and_continues():
    bad = SMALL.replace(param=Parameterization(kind="sp", base_lr=1e300))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        recs = list(run_coord_check(bad, "Width", [32, 64], [1], 3, exp_samples=10))
    good = list(run_coord_check(SMALL, "Width", [32], [1], 3, exp_samples=10))
    first = [r for r in recs if r.scale_value == 32]
    assert len(first) == len(good)
    assert any(math.isnan(r.value) for r in first)


def test_contracts():
    with pytest.raises(ContractViolation):
        list(run_coord_check(SMALL, "Reps", [], [1], 2))
    with pytest.raises(ContractViolation):
        list(run_coord_check(SMALL, "Reps", [1], [1], 1))
    with pytest.raises(ContractViolation):
        list(run_coord_check(SMALL, "Reps", [1], [1], 2, kv_view="both"))


def test_medians_by_point():
    m = medians_by_point(synthetic({1: 3.0, 2: 5.0}), Quantity.SPEC_DW, Role.ATTN_KV)
    assert m == {1: 3.0, 2: 5.0}
