"""Small dense-algebra helpers and seeded randomness.

Everything here works on float64 numpy arrays. The random stream comes from
numpy's Philox generator, a counter-based bit generator whose output for a
given key is fixed across platforms and numpy versions.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not line up."""


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def matvec_t(W, x) -> np.ndarray:
    """Return ``W.T @ x`` for a ``rows x cols`` matrix and a length-``rows`` vector."""
    W = np.asarray(W, dtype=np.float64)
    x = as_vec(x)
    if W.ndim != 2 or W.shape[0] != x.shape[0]:
        raise DimensionError(f"cannot form W^T x for W {W.shape} and x {x.shape}")
    return W.T @ x


def euclid_dist(a, b) -> float:
    a = as_vec(a)
    b = as_vec(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


def argmin_tiebreak(values) -> int:
    """Index of the smallest value; exact ties resolve to the lowest index."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("argmin of an empty sequence")
    # np.argmin returns the first occurrence of the minimum
    return int(np.argmin(v))


def derive_seed(seed: int, *names) -> int:
    """Deterministic 63-bit child seed from a master seed and a path of names."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", int(seed) & 0x7FFFFFFFFFFFFFFF))
    for name in names:
        h.update(b"\x00")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest(), "little") & 0x7FFFFFFFFFFFFFFF


class SeededRng:
    """Philox-backed generator keyed by a 64-bit seed.

    Identical seeds give identical streams. ``child(name)`` hands out an
    independent generator whose seed is a hash of this seed and ``name``, so
    adding a consumer never shifts anyone else's stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.Philox(key=self.seed & 0xFFFFFFFFFFFFFFFF))

    def child(self, *names) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *names))

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"
