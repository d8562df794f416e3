"""Replicated-matrix norm curves and residual depth-stability measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractViolation
from ..linalg import RngStream, gaussian_matrix
from ..model.autodiff import Tape
from ..norms import bai_yin_estimate, concat_rows, expected_operator_norm, spectral_norm
from ..parameterization import BetaMode, Parameterization, resolve_beta


@dataclass(frozen=True)
class NormRow:
    r: int
    n: int
    spectral: float
    expected: float
    expected_stderr: float
    expected_sd: float
    bai_yin: float

    @property
    def ratio(self) -> float:
        return self.spectral / self.expected if self.expected > 0 else math.nan


def _std_for(rule, n):
    if isinstance(rule, str):
        if rule in ("1/sqrt(n)", "inv_sqrt_n"):
            return 1.0 / math.sqrt(n)
        rule = float(rule)
    return float(rule)


def run_norm_experiment(n: int, reps, std_rule="1/sqrt(n)", samples: int = 1000, *, seed: int = 0,
                        draws: int = 1):
    """Spectral vs expected operator norm of ``[W; W; ...; W]`` (``r`` copies).

    For each ``r`` a ``(n/r, n)`` Gaussian ``W`` is drawn (``draws`` times,
    results averaged) and both norms of its ``r``-fold row replication are
    measured.  ``expected_sd`` is the spread of ``||Ax|| / ||x||`` over the
    probe vectors; ``bai_yin`` is the asymptotic spectral prediction
    ``sqrt(r) * std * (sqrt(n/r) + sqrt(n))``.
    """
    rows = []
    for r in reps:
        r = int(r)
        if n % r:
            raise ContractViolation(f"r={r} does not divide n={n}")
        std = _std_for(std_rule, n)
        spec, exp, se2, sd = [], [], [], []
        for d in range(draws):
            rng = RngStream(seed, 0x40F0).child(r, d)
            w = gaussian_matrix(rng.child(0), n // r, n, std)
            a = concat_rows(w, r)
            spec.append(spectral_norm(a, method="svd").value)
            est = expected_operator_norm(a, rng.child(1), samples)
            exp.append(est.value)
            se2.append(est.std_error**2)
            sd.append(est.std_error * math.sqrt(est.samples_or_iters))
        rows.append(
            NormRow(
                r=r,
                n=n,
                spectral=float(np.mean(spec)),
                expected=float(np.mean(exp)),
                expected_stderr=math.sqrt(sum(se2)) / draws,
                expected_sd=float(np.mean(sd)),
                bai_yin=math.sqrt(r) * bai_yin_estimate(n // r, n, std),
            )
        )
    return rows


def ratio_monotone(rows, sigmas: float = 3.0) -> bool:
    """Spectral/expected ratio nondecreasing in ``r`` up to ``sigmas`` Monte Carlo error."""
    rows = sorted(rows, key=lambda row: row.r)
    for a, b in zip(rows, rows[1:]):
        # only the expected norm is random given the matrices
        tol = sigmas * math.hypot(a.ratio * a.expected_stderr / a.expected,
                                  b.ratio * b.expected_stderr / b.expected)
        if b.ratio < a.ratio - tol:
            return False
    return True


@dataclass(frozen=True)
class DepthRow:
    L: int
    beta: float
    gain: float
    gain_sd: float


def run_depth_experiment(n: int, depths, beta_mode="complete-p", base_beta: float = 1.0, *,
                         seed: int = 0, probes: int = 16):
    """Forward gain ``||G_L(...G_1(x))|| / ||x||`` of frozen residual stacks.

    Block ``l`` computes ``x + beta * gelu(W_l x)`` with ``W_l`` Gaussian and
    rescaled to unit spectral norm.  Blocks are shared across depths (the
    stack of depth ``L`` is the first ``L`` blocks), so the depth trend is not
    confounded by redraws.  ``beta`` follows ``beta_mode`` with ``base_beta``.
    """
    p = Parameterization(beta_mode=BetaMode(beta_mode), base_beta=base_beta)
    depths = [int(L) for L in depths]
    if not depths or min(depths) < 1:
        raise ContractViolation("depths must be positive")
    rng = RngStream(seed, 0xDE97)
    blocks = []
    for i in range(max(depths)):
        g = gaussian_matrix(rng.child(i), n, n, 1.0)
        s = spectral_norm(g, method="svd").value
        blocks.append(g / s)
    x0 = rng.child(1 << 20).normal((probes, n))
    tape = Tape()
    rows = []
    for L in depths:
        beta = resolve_beta(p, L)
        x = x0
        for w in blocks[:L]:
            if beta:
                u = tape.gelu(tape.leaf(x @ w.T, requires_grad=False)).value
                x = x + beta * u
        gains = np.linalg.norm(x, axis=1) / np.linalg.norm(x0, axis=1)
        rows.append(DepthRow(L, beta, float(gains.mean()), float(gains.std(ddof=1))))
    return rows


def batch_size_tokens(n_tokens: float) -> float:
    """Batch size ``0.000733 * sqrt(n_tokens)`` from the isoloss fit."""
    if not n_tokens > 0:
        raise ContractViolation("n_tokens must be positive")
    return 0.000733 * math.sqrt(n_tokens)


def batch_sequences(n_tokens: float) -> int:
    """:func:`batch_size_tokens` rounded up to whole sequences, at least 1."""
    return max(1, math.ceil(batch_size_tokens(n_tokens)))
