"""Dense array helpers: seeded random streams, matrix products, norms and
spectral-norm estimation by power iteration.

All numerics are float64. Random streams are counter-based (Philox) and
keyed by (seed, stream name), so identical keys replay identical draws on
any platform.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ZeroOperatorError

STREAMS = ("data", "init", "batch", "baseline")

# fixed key for the power-iteration start vector; independent of user seeds
_POWER_KEY = (0x9E3779B97F4A7C15, 0x6C62272E07BB0142)


class Rng:
    """Deterministic random stream for one purpose.

    Two instances built with the same (seed, stream) produce bitwise-equal
    draw sequences. Streams with different names never collide even under
    the same seed.
    """

    def __init__(self, seed: int, stream: str):
        if stream not in STREAMS:
            raise ValueError(f"unknown stream {stream!r}, expected one of {STREAMS}")
        self.seed = int(seed)
        self.stream = stream
        key = np.array([self.seed % 2**64, STREAMS.index(stream)], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian(rows: int, cols: int, mean: float, std: float, rng: Rng) -> np.ndarray:
    """iid normal matrix, deterministic given the rng state."""
    if std < 0:
        raise ValueError("std must be nonnegative")
    return mean + std * rng.standard_normal((rows, cols))


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {A.ndim}-D and {B.ndim}-D")
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} x {B.shape}")
    return A @ B


def linf_norm(v: np.ndarray) -> float:
    """Max absolute entry; 0 for an empty array."""
    v = np.asarray(v)
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v)))


def spectral_norm_sq(D: np.ndarray, tol: float = 1e-9, max_iter: int = 10000) -> float:
    """Top eigenvalue of D^T D (the squared spectral norm of D).

    Power iteration with a fixed-key random unit start. Stops when the
    eigenvalue estimate changes by less than `tol` relative between sweeps.
    """
    D = np.asarray(D, dtype=np.float64)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if D.size == 0 or not np.any(D):
        raise ZeroOperatorError("spectral norm of the zero operator is undefined here")
    m = D.shape[1]
    gen = np.random.Generator(np.random.Philox(key=np.array(_POWER_KEY, dtype=np.uint64)))
    v = gen.standard_normal(m)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = D.T @ (D @ v)
        nrm = float(np.linalg.norm(u))
        if nrm == 0.0:
            # start vector landed in the null space; redraw
            v = gen.standard_normal(m)
            v /= np.linalg.norm(v)
            continue
        v = u / nrm
        if abs(nrm - lam) <= tol * nrm:
            return nrm
        lam = nrm
    return lam
