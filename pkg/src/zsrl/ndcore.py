"""Dense numeric helpers and the package-wide random number generator.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape and finiteness checks the rest of the package relies on.
"""

import hashlib
import math

import numpy as np

from .errors import ShapeError

_MASK64 = (1 << 64) - 1


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-D float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def matmul(a, b):
    """Matrix product with an explicit shape check.

    >>> matmul([[1, 2], [3, 4]], [[1], [1]]).tolist()
    [[3.0], [7.0]]
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matmul overflowed to non-finite values")
    return out


def softmax(v, axis=-1):
    """Numerically stable softmax along ``axis``.

    >>> softmax([0.0, 0.0]).tolist()
    [0.5, 0.5]
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("log_softmax of an empty vector")
    z = v - np.max(v, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sq_euclidean(a, b):
    """Squared L2 distance between two vectors (no square root)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d.ravel(), d.ravel()))


def derive_seed(seed, tag):
    """Derive a stage sub-seed from the top-level seed and a stage tag.

    The tag is hashed with SHA-256 so the result does not depend on
    Python's per-process string hashing.
    """
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return (int(seed) + int.from_bytes(digest[:8], "little")) & _MASK64


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator seeded through SplitMix64.

    Pure-Python integer arithmetic, so a given seed yields the same stream on
    every platform and numpy version. Normal deviates use the Box-Muller
    transform; uniform doubles take the top 53 bits of each output.
    """

    def __init__(self, seed=0):
        if seed < 0 or seed > _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        x = self.seed
        state = []
        for _ in range(4):
            x, out = _splitmix64(x)
            state.append(out)
        self._s = state
        self._spare = None

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def randbelow(self, n):
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        if n == 1:
            return 0
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, seq):
        if len(seq) == 0:
            raise IndexError("choice from an empty sequence")
        return seq[self.randbelow(len(seq))]

    def permutation(self, n):
        """Fisher-Yates permutation of range(n) as a list."""
        p = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            p[i], p[j] = p[j], p[i]
        return p

    def shuffle(self, seq):
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        vals = [low + (high - low) * self.random() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(size)

    def _gauss(self):
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = self.random()
        while u1 == 0.0:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def normal(self, mean=0.0, sigma=1.0, size=None):
        if size is None:
            return mean + sigma * self._gauss()
        n = int(np.prod(size))
        vals = [self._gauss() for _ in range(n)]
        return mean + sigma * np.array(vals, dtype=np.float64).reshape(size)

    def spawn(self, tag):
        """Independent child generator keyed by ``tag``."""
        return Rng(derive_seed(self.seed, tag))
