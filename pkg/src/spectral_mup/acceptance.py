"""The acceptance suite: one function per criterion, shared by the tests and ``verify``.

Each criterion returns a :class:`CriterionResult`.  Criteria with several
parts pass only if every asserted part passes; report-only parts are listed
in ``measured`` but never affect the outcome.
"""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .harness.coordcheck import (
    CoordCheckRecord,
    Quantity,
    ScaleVar,
    run_coord_check,
    verdict_from_records,
)
from .harness.experiments import ratio_monotone, run_depth_experiment, run_norm_experiment
from .harness.sweep import run_sweep
from .io import write_csv
from .linalg import RngStream, fit_loglog_slope, svd_max_singular
from .model import ModelConfig, forward, init_params, loss_and_backward, loss_only
from .norms import concat_rows, expected_operator_norm, spectral_norm
from .optim import AdamW, OptState, adam_step_direction
from .parameterization import (
    HIDDEN_ROLES,
    MATRIX_LIKE_ROLES,
    Kind,
    Parameterization,
    Role,
    resolve_group,
    wd_lr_balance_check,
)

logger = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    parts: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = "; ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in self.parts.items())
        return f"[{status}] criterion {self.number:2d} {self.title}" + (f" ({parts})" if parts else "")

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "pass": self.passed, "parts": self.parts,
                "measured": self.measured, "seconds": self.seconds}


def _result(number, title, parts, measured):
    return CriterionResult(number, title, all(parts.values()), parts, measured)


# -- norms ---------------------------------------------------------------------


def criterion_1(ctx=None):
    rng = RngStream(101, 0).generator
    worst = 0.0
    for _ in range(20):
        a = rng.standard_normal((int(rng.integers(1, 129)), int(rng.integers(1, 33))))
        s = svd_max_singular(a)
        for r in (1, 2, 3, 4, 9, 16):
            got = svd_max_singular(concat_rows(a, r))
            worst = max(worst, abs(got - math.sqrt(r) * s) / (math.sqrt(r) * s))
    return _result(1, "row concatenation scales the spectral norm by sqrt(r)",
                   {"rel_err<=1e-8": worst <= 1e-8}, {"max_rel_err": worst})


def criterion_2(ctx=None):
    power, dense = [], []
    for seed in range(10):
        a = RngStream(seed, 2).normal((1024, 1024))
        power.append(spectral_norm(a).value)
        dense.append(spectral_norm(a, method="svd").value)
    mp, md = float(np.mean(power)), float(np.mean(dense))
    return _result(2, "Gaussian 1024x1024 spectral norm near 2 sqrt(n) = 64",
                   {"power": abs(mp / 64 - 1) <= 0.05, "svd": abs(md / 64 - 1) <= 0.05},
                   {"mean_power": mp, "mean_svd": md, "max_route_gap": float(np.max(np.abs(np.subtract(power, dense))))})


def criterion_3(ctx=None):
    parts, meas = {}, {}
    for n in (256, 512, 1024):
        a = RngStream(n, 3).normal((n, n))
        ratio = expected_operator_norm(a, RngStream(n, 4), 1000).value / spectral_norm(a).value
        meas[f"ratio_n{n}"] = ratio
        parts[f"n={n}"] = 0.40 <= ratio <= 0.60
    return _result(3, "expected/spectral norm ratio of square Gaussians in [0.40, 0.60]", parts, meas)


def criterion_4(ctx=None):
    rows = run_norm_experiment(1152, [1, 2, 3, 4, 6, 12], samples=1000)
    exp_ok = all(0.85 <= row.expected <= 1.15 for row in rows)
    spec_ok = all(abs(row.spectral / (1 + math.sqrt(row.r)) - 1) <= 0.15 for row in rows)
    meas = {f"r{row.r}": {"spectral": row.spectral, "expected": row.expected, "ratio": row.ratio} for row in rows}
    return _result(4, "replicated-operator norms at n=1152",
                   {"expected_in_band": exp_ok, "spectral_near_1+sqrt(r)": spec_ok,
                    "ratio_monotone": ratio_monotone(rows)}, meas)


# -- model -----------------------------------------------------------------------


def criterion_5(ctx=None):
    """Directional and largest-entry central differences for every tensor."""
    cfg = ModelConfig(n=32, L=2, H=4, kv_heads=2, vocab=11, seq_len=8)
    params = init_params(cfg, RngStream(5, 0))
    toks = RngStream(5, 1).integers(0, 11, size=(2, 9))
    loss_and_backward(params, cfg, toks)
    grads = {k: g.copy() for k, g in params.grads.items()}
    h = 1e-5
    worst, per = 0.0, {}

    def fd(name, d):
        w = params.values[name]
        params.values[name] = w + h * d
        lp = loss_only(params, cfg, toks)
        params.values[name] = w - h * d
        lm = loss_only(params, cfg, toks)
        params.values[name] = w
        return (lp - lm) / (2 * h)

    for i, (name, g) in enumerate(grads.items()):
        errs = []
        d = RngStream(5, 2).child(i).normal(g.shape)
        errs.append(_rel(fd(name, d), float(np.sum(g * d))))
        for flat in np.argsort(np.abs(g), axis=None)[-3:]:
            e = np.zeros_like(g)
            e.flat[flat] = 1.0
            errs.append(_rel(fd(name, e), float(g.flat[flat])))
        per[name] = max(errs)
        worst = max(worst, per[name])
    return _result(5, "finite-difference gradient check, every tensor",
                   {"rel_err<=1e-4": worst <= 1e-4}, {"max_rel_err": worst, "per_tensor": per})


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def criterion_6(ctx=None):
    parts, meas = {}, {}
    for r in (1, 2, 4):
        cfg = ModelConfig(n=64, L=2, H=4, kv_heads=4 // r, vocab=32, seq_len=16)
        params = init_params(cfg, RngStream(6, r))
        toks = RngStream(6, 100 + r).integers(0, 32, size=(2, 16))
        got, _ = forward(params, cfg, toks)
        oracle_cfg = cfg.replace(kv_heads=cfg.H)
        oracle = params.copy()
        for name in oracle.values:
            if name.endswith((".k", ".v")):
                oracle.values[name] = concat_rows(params.values[name], r)
        want, _ = forward(oracle, oracle_cfg, toks)
        err = float(np.max(np.abs(got - want)))
        meas[f"r{r}_max_abs_diff"] = err
        parts[f"r={r}"] = err <= 1e-12
    return _result(6, "grouped attention equals the materialized concatenation", parts, meas)


# -- coordinate checks -------------------------------------------------------------

CC_TEMPLATE = dict(n=576, L=8, H=12, kv_heads=12, vocab=256, seq_len=128)
CC_PARAM = dict(base_lr=0.5, base_eps=1e-12, eps_scaling=False, base_wd=0.0)
CC_REPS = [1, 2, 3, 4, 6, 12]
CC_SEEDS = list(range(1, 11))
CC_STEPS = 5
CC_EXP_SAMPLES = 250


def coordcheck_template(kind) -> ModelConfig:
    return ModelConfig(**CC_TEMPLATE, param=Parameterization(kind=kind, **CC_PARAM))


def reps_records(kind, seeds=CC_SEEDS, points=CC_REPS):
    return list(run_coord_check(coordcheck_template(kind), ScaleVar.REPS, points, seeds, CC_STEPS,
                                roles=[Role.ATTN_KV], exp_samples=CC_EXP_SAMPLES))


def _slope(records, q):
    v = verdict_from_records([r for r in records if r.quantity is q and r.role is Role.ATTN_KV],
                             {q: 0.0})
    return v[0]


def criterion_7(ctx=None):
    ctx = {} if ctx is None else ctx
    gqa = ctx.setdefault("cc_gqa", reps_records(Kind.GQA_MUP))
    adam = ctx.setdefault("cc_adam", reps_records(Kind.ADAM_MUP))
    a = _slope(gqa, Quantity.EXP_DW)
    b = _slope(adam, Quantity.SPEC_DW)
    c = _slope(adam, Quantity.ACT_DH)
    meas = {
        "gqa_ExpDW_slope": a.measured_slope,
        "adam_SpecDW_slope": b.measured_slope,
        "adam_ActDH_slope": c.measured_slope,
        "report_only": {
            "gqa_SpecDW_slope": _slope(gqa, Quantity.SPEC_DW).measured_slope,
            "gqa_ActDH_slope": _slope(gqa, Quantity.ACT_DH).measured_slope,
            "adam_ExpDW_slope": _slope(adam, Quantity.EXP_DW).measured_slope,
        },
    }
    return _result(7, "coordinate checks over r at n=576",
                   {"a:gqa_ExpDW_flat": abs(a.measured_slope) <= 0.15,
                    "b:adam_SpecDW_not_flat": abs(b.measured_slope) > 0.15,
                    "c:adam_ActDH_flat": abs(c.measured_slope) <= 0.15}, meas)


def criterion_8(ctx=None):
    tmpl = ModelConfig(n=128, L=2, H=4, kv_heads=4, vocab=256, seq_len=128,
                       param=Parameterization(kind=Kind.GQA_MUP, **CC_PARAM))
    # keep d_head = 32 as the width grows
    recs = []
    for n in (128, 256, 512):
        t = tmpl.replace(n=n, H=n // 32, kv_heads=n // 32)
        recs += list(run_coord_check(t, ScaleVar.WIDTH, [n], [1, 2, 3], CC_STEPS,
                                     roles=[Role.ATTN_Q, Role.ATTN_O],
                                     quantities=[Quantity.SPEC_W, Quantity.SPEC_DW]))
    verdicts = verdict_from_records(recs, {Quantity.SPEC_W: 0.0, Quantity.SPEC_DW: 0.0})
    parts = {f"{v.quantity.value}/{v.role.value}": v.passed for v in verdicts}
    meas = {f"{v.quantity.value}/{v.role.value}": v.measured_slope for v in verdicts}
    return _result(8, "width coordinate check of square hidden layers", parts, meas)


# -- depth, weight decay, epsilon ----------------------------------------------------


def criterion_9(ctx=None):
    depths = [2, 4, 8, 16, 32, 64]
    cp = run_depth_experiment(256, depths, "complete-p", 1.0)
    const = run_depth_experiment(256, depths, "constant", 0.5)
    g = {row.L: row.gain for row in const}
    return _result(9, "depth stability of the residual stream",
                   {"complete-p_in_[0.5,2]": all(0.5 <= row.gain <= 2.0 for row in cp),
                    "constant_ratio>2": g[64] / g[8] > 2},
                   {"complete_p": {row.L: row.gain for row in cp}, "constant": g, "ratio_64_8": g[64] / g[8]})


def criterion_10(ctx=None):
    exact = True
    for kind in (Kind.GQA_MUP, Kind.ADAM_MUP):
        p = Parameterization(kind=kind, base_lr=0.01, base_wd=0.1)
        for n in (64, 128, 256, 512, 1024, 2048, 4096):
            for r in range(1, 17):
                for role in MATRIX_LIKE_ROLES:
                    exact &= wd_lr_balance_check(resolve_group(p, role, n, r, vocab=256)) == 1.0
    ratios = {}
    for n in (256, 512, 1024):
        cfg = ModelConfig(n=n, L=2, H=n // 64, kv_heads=n // 128, vocab=256, seq_len=32,
                          param=Parameterization(kind=Kind.GQA_MUP, base_lr=2.0**-4, base_wd=2.0**-6))
        params = init_params(cfg, RngStream(10, 0))
        opt = AdamW(params.groups, cfg.param.wd_mode)
        data = RngStream(10, 1)
        for step in range(50):
            loss_and_backward(params, cfg, data.child(step).integers(0, 256, size=(1, 33)))
            opt.step(params.values, params.grads)
        per_role = {}
        for name, w in params.values.items():
            g = params.groups[name]
            if g.role in HIDDEN_ROLES:
                decay = spectral_norm(g.wd * g.lr * w, method="svd").value
                upd = spectral_norm(g.lr * opt.last_rhat[name], method="svd").value
                per_role.setdefault(g.role.value, []).append(decay / upd)
        ratios[n] = {k: float(np.median(v)) for k, v in per_role.items()}
    band = {role: max(ratios[n][role] for n in ratios) / min(ratios[n][role] for n in ratios)
            for role in ratios[256]}
    return _result(10, "weight decay balances the learning rate",
                   {"exact_balance": bool(exact), "empirical_band<=3": all(b <= 3 for b in band.values())},
                   {"ratios": ratios, "max_over_min": band})


def criterion_11(ctx=None):
    widths = [64, 128, 256, 512, 1024]
    g0 = 1e-6
    out = {}
    for label, eps_of_n in (("constant", lambda n: 1e-8), ("scaled", lambda n: 1e-8 / n)):
        vals = []
        for n in widths:
            g = g0 * RngStream(11, n).normal((n, n)) / n
            st = OptState.zeros_like(g)
            vals.append(float(np.sqrt(np.mean(adam_step_direction(st, g, eps_of_n(n)) ** 2))))
        out[label] = fit_loglog_slope(widths, vals)[0]
    return _result(11, "Adam epsilon scaling keeps the update size width-independent",
                   {"constant_slope<=-0.5": out["constant"] <= -0.5, "scaled_slope_flat": abs(out["scaled"]) <= 0.1},
                   {"slope_constant_eps": out["constant"], "slope_scaled_eps": out["scaled"]})


# -- transfer sweeps -------------------------------------------------------------------

SWEEP_LR = [2.0**k for k in range(-11, 3)]
SWEEP_WD = [2.0**-8, 2.0**-4]
SWEEP_BUDGET = dict(tpp=0.02, min_tokens=51200, batch_scale=64)
SWEEP_CORPUS = {"kind": "markov", "vocab": 64, "length": 1 << 18}


def sweep_config(kind, n=64, r=1) -> ModelConfig:
    return ModelConfig(n=n, L=2, H=4, kv_heads=4 // r, vocab=64, seq_len=32, param=Parameterization(kind=kind))


def width_sweep(kind, lr_grid=SWEEP_LR):
    cfgs = [sweep_config(kind, n) for n in (64, 128, 256)]
    return run_sweep(cfgs, lr_grid, SWEEP_WD, 1, corpus=SWEEP_CORPUS, **SWEEP_BUDGET)


def reps_sweep(kind, lr_grid=SWEEP_LR):
    cfgs = [sweep_config(kind, 128, r) for r in (1, 4)]
    return run_sweep(cfgs, lr_grid, SWEEP_WD, 1, corpus=SWEEP_CORPUS, **SWEEP_BUDGET)


def criterion_12(ctx=None):
    ctx = {} if ctx is None else ctx
    out = {}
    for key, fn, kind in (("width_sp", width_sweep, Kind.SP), ("width_gqa", width_sweep, Kind.GQA_MUP),
                          ("reps_adam", reps_sweep, Kind.ADAM_MUP), ("reps_gqa", reps_sweep, Kind.GQA_MUP)):
        out[key] = ctx.setdefault(f"sweep_{key}", fn(kind))[1]
    meas = {k: {"var_log2_lr": s.var_log2_lr, "var_log2_tau": s.var_log2_tau, "var_loss": s.var_loss,
                "lr_opt": [o.lr for o in s.optima], "diverged": s.diverged} for k, s in out.items()}
    return _result(12, "learning-rate transfer ordering at desk scale",
                   {"width:gqa<sp": out["width_gqa"].var_log2_lr < out["width_sp"].var_log2_lr,
                    "reps:gqa<=adam": out["reps_gqa"].var_log2_lr <= out["reps_adam"].var_log2_lr}, meas)


def coord_csv(records) -> bytes:
    buf = io.StringIO()
    write_csv(records, "coordcheck", buf)
    return buf.getvalue().encode()


def criterion_13(ctx=None):
    ctx = {} if ctx is None else ctx
    first = reps_records(Kind.GQA_MUP, seeds=CC_SEEDS[:1], points=CC_REPS[:1])
    again = reps_records(Kind.GQA_MUP, seeds=CC_SEEDS[:1], points=CC_REPS[:1])
    parts = {"rerun_identical": coord_csv(first) == coord_csv(again)}
    if "cc_gqa" in ctx:
        prefix = [r for r in ctx["cc_gqa"] if r.seed == CC_SEEDS[0] and r.scale_value == CC_REPS[0]]
        parts["matches_criterion_7"] = coord_csv(prefix) == coord_csv(first)
    return _result(13, "coordinate check replays bit-identically", parts, {"records": len(first)})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 14)}


def run_criterion(number: int, ctx=None) -> CriterionResult:
    t = time.perf_counter()
    res = CRITERIA[number](ctx)
    res.seconds = time.perf_counter() - t
    logger.info("%s in %.1fs", res.line(), res.seconds)
    return res


def run_all(only=None, ctx=None):
    ctx = {} if ctx is None else ctx
    numbers = sorted(CRITERIA) if not only else sorted(only)
    return [run_criterion(i, ctx) for i in numbers]
