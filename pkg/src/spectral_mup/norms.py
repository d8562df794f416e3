"""Operator norms used by the spectral scaling conditions.

Two notions of size are provided for a weight matrix ``A``:

* the spectral norm ``sup ||Ax|| / ||x||`` (power iteration or dense SVD), and
* the expected operator norm ``E_x[||Ax|| / ||x||]`` over standard-normal
  ``x``, estimated by Monte Carlo with a reported standard error.

They agree up to a constant for square i.i.d. matrices but separate for
row-replicated (rank-degenerate) matrices such as grouped key/value weights.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation, ConvergenceError
from .linalg import RngStream, as_matrix, svd_max_singular

POWER_ITERATION_STREAM = 0x5EC7_0001
MC_CHUNK = 250
DEFAULT_SAMPLES = 1000


class NormMethod(str, enum.Enum):
    POWER_ITERATION = "PowerIteration"
    DENSE_SVD = "DenseSVD"
    MONTE_CARLO = "MonteCarlo"


@dataclass(frozen=True)
class NormEstimate:
    value: float
    method: NormMethod
    samples_or_iters: int
    std_error: float = 0.0
    guard_trips: int = 0

    def __post_init__(self):
        if not self.value >= 0:
            raise ContractViolation(f"norm value must be >= 0, got {self.value}")
        if self.std_error < 0:
            raise ContractViolation("std_error must be >= 0")
        if self.method is not NormMethod.MONTE_CARLO and self.std_error != 0:
            raise ContractViolation("deterministic estimates carry no standard error")

    def __float__(self):
        return self.value


def spectral_norm(a, tol=1e-10, max_iters=5000, *, method="power", block=8, rng=None):
    """Largest singular value of ``a``.

    Parameters
    ----------
    a : array_like, 2-D
    tol : float
        Relative tolerance.  Power iteration stops once the relative residual
        of the leading Ritz pair of the Gram matrix drops below ``tol``.
    max_iters : int
    method : {"power", "svd"}
        ``"power"`` runs block power iteration with Rayleigh-Ritz on the
        smaller Gram matrix; ``"svd"`` defers to the dense SVD.
    block : int
        Block size for power iteration (1 gives the classical method).
    rng : RngStream, optional
        Source of the start block.  Defaults to a reserved fixed stream.

    Raises
    ------
    ConvergenceError
        ``max_iters`` reached; ``last_values`` holds the last two Rayleigh
        quotients (squared singular value estimates).
    """
    a = as_matrix(a)
    if tol <= 0 or max_iters < 1:
        raise ContractViolation("tol must be > 0 and max_iters >= 1")
    if method == "svd":
        return NormEstimate(svd_max_singular(a, tol), NormMethod.DENSE_SVD, 1)
    if method != "power":
        raise ContractViolation(f"unknown method {method!r}")
    if not np.any(a):
        return NormEstimate(0.0, NormMethod.POWER_ITERATION, 0)

    rows, cols = a.shape
    if rows >= cols:
        dim = cols
        gram = lambda v: a.T @ (a @ v)  # noqa: E731
    else:
        dim = rows
        gram = lambda v: a @ (a.T @ v)  # noqa: E731
    k = max(1, min(block, dim))
    if rng is None:
        rng = RngStream(0, POWER_ITERATION_STREAM)
    v, _ = np.linalg.qr(rng.normal((dim, k)))

    history = []
    for it in range(1, max_iters + 1):
        w = gram(v)
        h = v.T @ w
        h = 0.5 * (h + h.T)
        evals, evecs = np.linalg.eigh(h)
        theta = float(evals[-1])
        y = evecs[:, -1]
        resid = float(np.linalg.norm(w @ y - theta * (v @ y)))
        history.append(theta)
        if theta <= 0:
            return NormEstimate(0.0, NormMethod.POWER_ITERATION, it)
        if resid <= tol * theta:
            return NormEstimate(math.sqrt(theta), NormMethod.POWER_ITERATION, it)
        # keep Ritz vectors ordered so the leading one stays in column 0
        v, _ = np.linalg.qr(w @ evecs[:, ::-1])
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iters} iterations",
        iterations=max_iters,
        last_values=history[-2:],
    )


def _sample_ratios(a, rng, count, chunk_index):
    cols = a.shape[1]
    sub = rng.child(chunk_index)
    x = sub.normal((cols, count))
    xn = np.linalg.norm(x, axis=0)
    trips = 0
    while np.any(xn == 0):
        # probability-zero event; redraw only the offending columns
        bad = np.flatnonzero(xn == 0)
        trips += len(bad)
        x[:, bad] = sub.child(trips).normal((cols, len(bad)))
        xn = np.linalg.norm(x, axis=0)
    return np.linalg.norm(a @ x, axis=0) / xn, trips


def expected_operator_norm(a, rng: RngStream, num_samples=DEFAULT_SAMPLES, *, samples=None):
    """Monte Carlo estimate of ``E ||A x||_2 / ||x||_2`` with ``x ~ N(0, I)``.

    Samples are drawn in fixed-size chunks, chunk ``i`` from ``rng.child(i)``,
    so the estimate does not depend on how chunks are scheduled.

    Parameters
    ----------
    a : array_like, 2-D
    rng : RngStream
    num_samples : int
        Ignored when ``samples`` is given.
    samples : ndarray of shape (a.shape[1], m), optional
        Explicit probe vectors as columns; useful to compare several matrices
        on a common sample set.
    """
    a = as_matrix(a)
    trips = 0
    if samples is not None:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != a.shape[1] or x.shape[1] < 2:
            raise ContractViolation(f"samples must have shape ({a.shape[1]}, m>=2), got {x.shape}")
        xn = np.linalg.norm(x, axis=0)
        if np.any(xn == 0):
            raise ContractViolation("explicit samples contain a zero vector")
        ratios = np.linalg.norm(a @ x, axis=0) / xn
    else:
        if num_samples < 2:
            raise ContractViolation("num_samples must be >= 2")
        parts = []
        for i, start in enumerate(range(0, num_samples, MC_CHUNK)):
            r, t = _sample_ratios(a, rng, min(MC_CHUNK, num_samples - start), i)
            parts.append(r)
            trips += t
        ratios = np.concatenate(parts)
    n = len(ratios)
    se = float(np.std(ratios, ddof=1)) / math.sqrt(n)
    return NormEstimate(float(np.mean(ratios)), NormMethod.MONTE_CARLO, n, se, trips)


def concat_rows(a, r: int) -> np.ndarray:
    """Stack ``r`` copies of ``a`` along the first (output) dimension."""
    a = as_matrix(a)
    if int(r) != r or r < 1:
        raise ContractViolation(f"r must be a positive integer, got {r}")
    return np.tile(a, (int(r), 1))


def bai_yin_estimate(rows: int, cols: int, std: float) -> float:
    """Asymptotic spectral norm ``std * (sqrt(rows) + sqrt(cols))`` of an i.i.d. matrix."""
    if rows < 1 or cols < 1 or std < 0:
        raise ContractViolation("need rows, cols >= 1 and std >= 0")
    return float(std) * (math.sqrt(rows) + math.sqrt(cols))
