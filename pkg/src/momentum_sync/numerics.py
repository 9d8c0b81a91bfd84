"""Deterministic numeric kernels: counter-based random streams and order-fixed reductions.

Every public operation here is bit-reproducible: results depend only on the
inputs (and, for random draws, on the (seed, worker_id, counter) triple),
never on thread count or call interleaving.  Worker streams are splittable
by construction, so each simulated worker can be handed its own stream and
advanced independently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "RngStream",
    "gaussian_vector",
    "WorkerStreams",
    "fixed_order_mean",
    "fixed_order_mix",
    "symmetric_eigenvalues",
    "NonSymmetricError",
]

# splitmix64 finalizer constants
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# 2**-53, so (word >> 11) * _INV53 is uniform on [0, 1) with full mantissa
_INV53 = float(2.0**-53)

_MAX_EIG_DIM = 256
_SYMMETRY_TOL = 1e-12


class NonSymmetricError(ValueError):
    """Raised when a matrix handed to the symmetric eigensolver is not symmetric."""


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wraps mod 2**64)."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(value: int) -> np.ndarray:
    # 1-element uint64 array; numpy scalars warn on overflow, arrays wrap silently
    return np.array([value % (1 << 64)], dtype=np.uint64)


class RngStream:
    """Counter-based random stream for one worker.

    The next draw is a pure function of (seed, worker_id, counter); the
    counter advances by the exact number of 64-bit words consumed.  Streams
    with distinct worker_ids are independent keyed sequences, so workers can
    draw concurrently without any shared state.
    """

    __slots__ = ("seed", "worker_id", "counter", "_k1", "_k2")

    def __init__(self, seed: int, worker_id: int, counter: int = 0):
        if worker_id < 0:
            raise ValueError("worker_id must be nonnegative")
        if counter < 0:
            raise ValueError("counter must be nonnegative")
        self.seed = int(seed)
        self.worker_id = int(worker_id)
        self.counter = int(counter)
        k1 = _mix64(_as_u64(self.seed) + _GOLDEN * _as_u64(self.worker_id + 1))
        k2 = _mix64(k1 ^ _M2)
        self._k1 = k1
        self._k2 = k2

    def raw_words(self, n: int) -> np.ndarray:
        """n raw 64-bit words at counters [counter, counter + n); advances the counter."""
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return _mix64(self._k1 + _mix64(self._k2 + idx * _GOLDEN))

    def uniforms(self, n: int) -> np.ndarray:
        """n uniforms on [0, 1), one word each."""
        return (self.raw_words(n) >> _S11).astype(np.float64) * _INV53

    def normal_block(self, rows: int, m: int, scale: float) -> np.ndarray:
        """(rows, m) block of independent draws; each row is one gaussian_vector draw.

        A block consumes counters exactly as `rows` successive gaussian_vector
        calls would, so bulk Monte-Carlo sampling and step-by-step simulation
        share one stream layout.
        """
        if rows < 0 or m < 1:
            raise ValueError("need rows >= 0 and m >= 1")
        if scale < 0:
            raise ValueError("scale must be nonnegative")
        pairs = (m + 1) // 2
        words = self.raw_words(2 * rows * pairs).reshape(rows, 2 * pairs)
        u1 = (words[:, 0::2] >> _S11).astype(np.float64) * _INV53
        u2 = (words[:, 1::2] >> _S11).astype(np.float64) * _INV53
        # Box-Muller: 1 - u1 lies in (0, 1], so the log argument never hits 0
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        z = np.empty((rows, 2 * pairs))
        z[:, 0::2] = r * np.cos(theta)
        z[:, 1::2] = r * np.sin(theta)
        return z[:, :m] * (scale / np.sqrt(m))

    def integer_below(self, n: int) -> int:
        """One integer uniform on {0, ..., n-1}."""
        if n < 1:
            raise ValueError("n must be positive")
        u = float(self.uniforms(1)[0])
        return min(int(u * n), n - 1)


def gaussian_vector(stream: RngStream, m: int, scale: float) -> np.ndarray:
    """Vector of m independent N(0, scale**2 / m) draws, so E||v||^2 = scale**2."""
    return stream.normal_block(1, m, scale)[0]


class WorkerStreams:
    """Lockstep batch of the per-worker streams RngStream(seed, 0..n-1).

    normal_rows(m, scale) returns one gaussian_vector draw per worker in a
    single vectorized call; row i and the counter bookkeeping are
    bit-identical to gaussian_vector(RngStream(seed, i), m, scale).
    """

    def __init__(self, seed: int, n: int):
        singles = [RngStream(seed, i) for i in range(n)]
        self._k1 = np.concatenate([s._k1 for s in singles])[:, None]
        self._k2 = np.concatenate([s._k2 for s in singles])[:, None]
        self.n = n
        self.counter = 0
        self._idx_cache: dict = {}

    def normal_rows(self, m: int, scale: float) -> np.ndarray:
        if m < 1:
            raise ValueError("need m >= 1")
        if scale < 0:
            raise ValueError("scale must be nonnegative")
        width = 2 * ((m + 1) // 2)
        idxg = self._idx_cache.get(width)
        if idxg is None:
            idxg = np.arange(width, dtype=np.uint64) * _GOLDEN
            self._idx_cache[width] = idxg
        # (counter + i) * GOLDEN == counter * GOLDEN + i * GOLDEN mod 2**64
        offsets = _as_u64(self.counter) * _GOLDEN + idxg
        self.counter += width
        words = _mix64(self._k1 + _mix64(self._k2 + offsets[None, :]))
        u1 = (words[:, 0::2] >> _S11).astype(np.float64) * _INV53
        u2 = (words[:, 1::2] >> _S11).astype(np.float64) * _INV53
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        z = np.empty((self.n, width))
        z[:, 0::2] = r * np.cos(theta)
        z[:, 1::2] = r * np.sin(theta)
        return z[:, :m] * (scale / np.sqrt(m))


class WorkerStreams:
    """Lockstep batch of the per-worker streams RngStream(seed, 0..n-1).

    normal_rows(m, scale) returns one gaussian_vector draw per worker in a
    single vectorized call; row i and the counter bookkeeping are
    bit-identical to gaussian_vector(RngStream(seed, i), m, scale).
    """

    def __init__(self, seed: int, n: int):
        singles = [RngStream(seed, i) for i in range(n)]
        self._k1 = np.concatenate([s._k1 for s in singles])[:, None]
        self._k2 = np.concatenate([s._k2 for s in singles])[:, None]
        self.n = n
        self.counter = 0
        self._idx_cache: dict = {}

    def normal_rows(self, m: int, scale: float) -> np.ndarray:
        if m < 1:
            raise ValueError("need m >= 1")
        if scale < 0:
            raise ValueError("scale must be nonnegative")
        width = 2 * ((m + 1) // 2)
        idxg = self._idx_cache.get(width)
        if idxg is None:
            idxg = np.arange(width, dtype=np.uint64) * _GOLDEN
            self._idx_cache[width] = idxg
        # (counter + i) * GOLDEN == counter * GOLDEN + i * GOLDEN mod 2**64
        offsets = _as_u64(self.counter) * _GOLDEN + idxg
        self.counter += width
        words = _mix64(self._k1 + _mix64(self._k2 + offsets[None, :]))
        u1 = (words[:, 0::2] >> _S11).astype(np.float64) * _INV53
        u2 = (words[:, 1::2] >> _S11).astype(np.float64) * _INV53
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        z = np.empty((self.n, width))
        z[:, 0::2] = r * np.cos(theta)
        z[:, 1::2] = r * np.sin(theta)
        return z[:, :m] * (scale / np.sqrt(m))


def gaussian_vectors(streams, m: int, scale: float) -> np.ndarray:
    """One gaussian_vector draw per stream, batched into a (len(streams), m) array.

    Row i is bit-identical to gaussian_vector(streams[i], m, scale) and each
    stream's counter advances exactly as in the single-stream call, so the
    batched and worker-by-worker execution paths are interchangeable.
    """
    if m < 1:
        raise ValueError("need m >= 1")
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    n = len(streams)
    pairs = (m + 1) // 2
    width = 2 * pairs
    k1 = np.empty(n, dtype=np.uint64)
    k2 = np.empty(n, dtype=np.uint64)
    counters = np.empty(n, dtype=np.uint64)
    for i, s in enumerate(streams):
        k1[i] = s._k1[0]
        k2[i] = s._k2[0]
        counters[i] = s.counter
        s.counter += width
    idx = counters[:, None] + np.arange(width, dtype=np.uint64)[None, :]
    words = _mix64(k1[:, None] + _mix64(k2[:, None] + idx * _GOLDEN))
    u1 = (words[:, 0::2] >> _S11).astype(np.float64) * _INV53
    u2 = (words[:, 1::2] >> _S11).astype(np.float64) * _INV53
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    z = np.empty((n, width))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :m] * (scale / np.sqrt(m))


def fixed_order_mean(vectors) -> np.ndarray:
    """Arithmetic mean accumulated in ascending index order.

    Accumulates deviations from the first element, which keeps the mean of K
    identical vectors exactly equal to that vector (no rounding drift) and is
    bit-stable under any execution parallelism.
    """
    if len(vectors) == 0:
        raise ValueError("mean of empty list")
    first = np.asarray(vectors[0], dtype=np.float64)
    acc = np.zeros_like(first)
    for v in vectors[1:]:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != first.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {first.shape}")
        acc = acc + (v - first)
    return first + acc / len(vectors)


def fixed_order_mix(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted column-combinations out[i] = sum_j weights[j, i] * rows[j].

    The j-sum is accumulated in ascending order for every output row, which
    keeps gossip averaging bit-stable regardless of scheduling.
    """
    rows = np.asarray(rows, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = rows.shape[0]
    if weights.shape != (n, n):
        raise ValueError(f"weights must be ({n}, {n}), got {weights.shape}")
    out = np.zeros_like(rows)
    for j in range(n):
        out += weights[j][:, None] * rows[j][None, :]
    return out


def symmetric_eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, descending.

    Uses the dense symmetric solver (tridiagonal reduction); inputs are
    limited to N <= 256 because every topology at desk scale is tiny.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] > _MAX_EIG_DIM:
        raise ValueError(f"matrix dimension {m.shape[0]} exceeds {_MAX_EIG_DIM}")
    skew = np.max(np.abs(m - m.T)) if m.size else 0.0
    if skew > _SYMMETRY_TOL:
        raise NonSymmetricError(f"matrix is not symmetric: max |M - M^T| = {skew:.3e}")
    return np.linalg.eigvalsh(m)[::-1].copy()
