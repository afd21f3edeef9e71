"""Deterministic numeric kernel.

Matrices are plain 2-D float64 numpy arrays in C (row-major) order; every
public operation validates shapes and finiteness rather than trusting the
caller.  Randomness comes exclusively from :class:`SeededRng`, a thin wrapper
around numpy's PCG64 generator whose streams are reproducible across runs and
platforms for a fixed numpy version.
"""

from __future__ import annotations

import zlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} contains non-finite entries")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape and finiteness checks."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Args:
        f: scalar function of a 1-D parameter vector.
        theta: point at which to estimate the gradient.
        eps: step size; the estimate error is O(eps**2).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = as_vector(theta, "theta")
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + eps
        hi = float(f(probe))
        probe[i] = theta[i] - eps
        lo = float(f(probe))
        probe[i] = theta[i]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"function value non-finite near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


class SeededRng:
    """Deterministic random generator (numpy PCG64 behind SeedSequence).

    Two instances constructed with the same seed produce identical draw
    sequences.  ``derive(tag)`` creates an independent child stream that
    depends only on (seed, tag path), so consuming one stream never perturbs
    another; the training code uses this to keep e.g. parameter
    initialisation and batch sampling decoupled.
    """

    def __init__(self, seed: int, _keys: tuple[int, ...] | None = None):
        self.seed = int(seed)
        self._keys = _keys if _keys is not None else (self.seed,)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._keys)))

    def derive(self, tag: str) -> "SeededRng":
        """Independent child generator keyed by (this stream, tag)."""
        salt = zlib.crc32(tag.encode("utf-8"))
        return SeededRng(self.seed, self._keys + (salt,))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, values: Sequence, size=None, replace: bool = True):
        return self._gen.choice(values, size=size, replace=replace)
