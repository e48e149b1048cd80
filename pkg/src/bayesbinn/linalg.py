"""Dense float64 array helpers and the seeded random stream used everywhere.

All numerics in this package run in 64-bit floats: the relaxation temperature
goes down to 1e-10 in the image presets, which float32 cannot represent next
to 1. Randomness comes from a single generator class wrapping numpy's PCG64
(a PCG-family generator with a documented, fixed algorithm), so identical
seeds reproduce identical streams across platforms for a given numpy version.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "Rng",
    "as_matrix",
    "as_vector",
    "matmul",
    "softmax_rows",
    "uniform_open",
]


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Validate and return `x` as a finite, C-contiguous, 2-D float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "x") -> np.ndarray:
    """Validate and return `x` as a finite, 1-D float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product of two dense float64 matrices with shape validation."""
    am = as_matrix(a, "a")
    bm = as_matrix(b, "b")
    if am.shape[1] != bm.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {am.shape} @ {bm.shape}"
        )
    return am @ bm


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization.

    Rows of the result are non-negative and sum to 1 (to float64 roundoff)
    even for logits around +-1e3.
    """
    z = as_matrix(logits, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class Rng:
    """Seeded random stream (numpy PCG64) with the draw primitives we need.

    The stream is fully determined by ``seed`` (plus the optional derivation
    key used by :meth:`for_stream`); all consumers draw from it in a fixed
    documented order so runs are reproducible bit-for-bit.
    """

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @classmethod
    def for_stream(cls, seed: int, *key: int) -> "Rng":
        """Derive an independent substream from (seed, key...) deterministically."""
        ss = np.random.SeedSequence([int(seed), *(int(k) for k in key)])
        return cls(seed, _ss=ss)

    def uniform_open(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in the open interval (0, 1).

        numpy's ``random()`` draws from [0, 1); exact 0.0 draws (probability
        2**-53 each) are rejected and redrawn, and 1.0 cannot occur but is
        guarded anyway.
        """
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        u = self._gen.random(int(n))
        bad = (u <= 0.0) | (u >= 1.0)
        while bad.any():
            u[bad] = self._gen.random(int(bad.sum()))
            bad = (u <= 0.0) | (u >= 1.0)
        return u

    def signs(self, n: int) -> np.ndarray:
        """n fair draws from {-1.0, +1.0}."""
        return np.where(self._gen.random(int(n)) < 0.5, -1.0, 1.0)

    def normal(self, shape, sd: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * float(sd)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def integers(self, low: int, high: int, size) -> np.ndarray:
        return self._gen.integers(low, high, size=size)


def uniform_open(rng: Rng, n: int) -> np.ndarray:
    """Functional alias for :meth:`Rng.uniform_open`."""
    return rng.uniform_open(n)
