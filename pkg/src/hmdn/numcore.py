"""Dense numeric substrate: matrices, a portable seeded RNG, stable reductions.

Everything is 64-bit float. The RNG is splitmix64 (Steele, Lea & Flood's
mixing function over a Weyl sequence with increment 0x9E3779B97F4A7C15),
implemented here directly so that streams are byte-identical across
platforms and numpy versions. Normal variates use the Box-Muller transform.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ShapeError

# splitmix64 constants
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1

# offset basis / prime of FNV-1a, used to hash spawn tags into child seeds
_FNV_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_INV_2_53 = 2.0 ** -53


def mix64(z: int) -> int:
    """splitmix64 output function: bijective avalanche mix of a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_BASIS
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """Deterministic splitmix64 stream.

    State is ``seed + n * GAMMA (mod 2^64)`` after ``n`` draws, so block
    generation is a vectorized counter evaluation that produces exactly the
    same stream as repeated scalar calls. Uniforms take the top 53 bits of
    each word; normals come from Box-Muller pairs
    ``sqrt(-2 ln u1) * (cos, sin)(2 pi u2)`` with ``u1`` mapped into (0, 1]
    so the logarithm is always finite. Single-owner: do not share across
    threads, derive children with :meth:`spawn` instead.
    """

    __slots__ = ("seed", "_count")

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        self.seed = int(seed)
        self._count = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, drawn={self._count})"

    def next_u64(self) -> int:
        """Next raw 64-bit word as a Python int."""
        self._count += 1
        return mix64((self.seed + self._count * _GAMMA) & _MASK64)

    def u64_block(self, n: int) -> np.ndarray:
        """``n`` raw words as a uint64 array; identical to ``n`` scalar calls."""
        if n < 0:
            raise ValueError(f"block size must be >= 0, got {n}")
        counters = self.seed + (self._count + 1 + np.arange(n, dtype=np.uint64)) * np.uint64(_GAMMA)
        self._count += n
        z = counters
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int | None = None):
        """Uniforms on [0, 1): ``(word >> 11) * 2^-53``. Scalar when n is None."""
        if n is None:
            return (self.next_u64() >> 11) * _INV_2_53
        return ((self.u64_block(n) >> np.uint64(11))).astype(np.float64) * _INV_2_53

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller.

        Draws ceil(n/2) pairs; the pair order is (z_cos, z_sin) interleaved,
        and the trailing value of the last pair is discarded for odd ``n``.
        """
        if n < 0:
            raise ValueError(f"count must be >= 0, got {n}")
        pairs = (n + 1) // 2
        words = self.u64_block(2 * pairs)
        u1 = ((words[0::2] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV_2_53
        u2 = ((words[1::2] >> np.uint64(11))).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): stable argsort of n uniforms."""
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, *tags) -> "Rng":
        """Child generator for a named substream.

        The child seed is ``mix64(mix64(seed) XOR fnv1a("/".join(tags)))``;
        children are independent of the parent's position in its own stream.
        """
        if not tags:
            raise ValueError("spawn needs at least one tag")
        label = "/".join(str(t) for t in tags)
        return Rng(mix64(mix64(self.seed) ^ _fnv1a(label.encode("utf-8"))))


def gaussian_sample(rng: Rng, mu, sigma: float) -> np.ndarray:
    """Draw one point from an isotropic Gaussian: ``mu_i + sigma * z_i``."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1:
        raise ShapeError(f"mu must be a vector, got shape {mu.shape}")
    return mu + sigma * rng.normals(mu.shape[0])


class Matrix:
    """Immutable row-major float64 matrix.

    A thin value wrapper over a read-only ndarray: construction and every
    public operation verify that all entries are finite. Safe to share
    across threads.
    """

    __slots__ = ("_a",)

    def __init__(self, data):
        a = np.array(data, dtype=np.float64, order="C")
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise ShapeError(f"matrix data must be 2-dimensional, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise NumericError("matrix entries must all be finite")
        a.flags.writeable = False
        self._a = a

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def data(self) -> tuple:
        """Entries flattened row-major."""
        return tuple(self._a.ravel())

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view (no copy)."""
        return self._a

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self._a.shape == other._a.shape and bool(np.all(self._a == other._a))

    def __hash__(self):
        return hash((self._a.shape, self.data))

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product; raises ShapeError naming both shapes."""
    if a.cols != b.rows:
        raise ShapeError(
            f"cannot multiply {a.rows}x{a.cols} by {b.rows}x{b.cols}: "
            f"inner dimensions {a.cols} != {b.rows}"
        )
    return Matrix(a.array @ b.array)


def log_sum_exp(v) -> float:
    """ln sum(exp(v_i)) computed by shifting by max(v); exact for length 1."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] == 0:
        raise ValueError(f"log_sum_exp needs a non-empty vector, got shape {a.shape}")
    if a.shape[0] == 1:
        return float(a[0])
    m = float(np.max(a))
    if not np.isfinite(m):
        # all -inf stays -inf; a +inf or NaN propagates
        return m if not np.isnan(m) else float("nan")
    return m + math.log(float(np.sum(np.exp(a - m))))


def log_sum_exp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp for a 2-D array (vector path used by batched code).

    Rows that are entirely -inf yield -inf (log of zero mass), not an error.
    """
    m = np.max(a, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True))).ravel()
