"""Dense float64 linear algebra and reproducible random streams.

A "matrix" throughout the package is a 2-D ``numpy.ndarray`` of dtype float64.
Random streams are keyed Philox generators so that a ``(master_seed, stream_id)``
pair always produces the same draws, independent of platform and of what any
other stream has consumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation, ConvergenceError

_U64 = (1 << 64) - 1


def as_matrix(a, name="a"):
    """Validate ``a`` as a non-empty finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractViolation(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return arr


@dataclass
class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    The Philox key is the pair itself and the counter is the draw index, so
    two streams with the same key replay identical samples and distinct keys
    are independent.  A stream object is stateful; share the key, not the
    object, across tasks.
    """

    master_seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.master_seed = int(self.master_seed) & _U64
        self.stream_id = int(self.stream_id) & _U64

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def child(self, *path) -> "RngStream":
        """Derive an independent stream addressed by ``path`` under this key."""
        words = [self.stream_id & 0xFFFFFFFF, self.stream_id >> 32]
        for p in path:
            p = int(p) & _U64
            words += [p & 0xFFFFFFFF, p >> 32]
        sid = int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.master_seed, sid)

    def normal(self, size, std=1.0) -> np.ndarray:
        return self.generator.standard_normal(size) * float(std)

    def integers(self, low, high, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n) -> np.ndarray:
        return self.generator.permutation(n)


def gaussian_matrix(rng: RngStream, rows: int, cols: int, std: float) -> np.ndarray:
    """Sample a ``rows x cols`` matrix with i.i.d. N(0, std**2) entries."""
    if rows < 1 or cols < 1:
        raise ContractViolation(f"rows and cols must be >= 1, got {rows}x{cols}")
    if not std >= 0:
        raise ContractViolation(f"std must be >= 0, got {std}")
    if std == 0:
        return np.zeros((rows, cols))
    return rng.normal((rows, cols), std)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def svd_max_singular(a, tol: float = 1e-12) -> float:
    """Largest singular value via LAPACK's dense SVD (divide and conquer).

    ``tol`` is accepted for interface symmetry; LAPACK reaches machine precision.
    """
    a = as_matrix(a)
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    try:
        s = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        cap = 10 * max(a.shape)
        raise ConvergenceError(f"dense SVD did not converge: {exc}", iterations=cap) from exc
    return float(s[0])


def fit_loglog_slope(xs, ys):
    """Ordinary least squares of ``log y`` on ``log x``.

    Returns
    -------
    slope, intercept, r2 : float
        ``r2`` is 1.0 when ``log y`` is constant (the fit is exact).
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ContractViolation("xs and ys must be 1-D sequences of equal length")
    if len(x) < 3:
        raise ContractViolation(f"need at least 3 points, got {len(x)}")
    if not (np.all(x > 0) and np.all(y > 0)):
        raise ContractViolation("xs and ys must be strictly positive")
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    dy = ly - ly.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ContractViolation("xs must not all be equal")
    slope = float(dx @ dy) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    syy = float(dy @ dy)
    if syy == 0:
        return slope, intercept, 1.0
    resid = dy - slope * dx
    r2 = 1.0 - float(resid @ resid) / syy
    return slope, intercept, min(1.0, max(0.0, r2))


def rms(x) -> float:
    x = np.asarray(x)
    return math.sqrt(float(np.mean(x * x)))
