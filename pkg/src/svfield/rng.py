"""Counter-based random numbers keyed by lattice site.

Every draw is a pure function of ``(seed, stream, replication, site, draw)``.
Two windows that share a site therefore see the same noise value at that
site, and the output of a replication never depends on scheduling or on how
many threads are used.
"""
import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream ids
NOISE = 1
SIGN = 2
VOLATILITY = 3
REGIME = 4
GARCH = 5
THEORY = 6
AUX = 7


@njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always")
def _to_unit(h):
    # open interval (0, 1)
    return (np.float64(h >> _S11) + 0.5) * _INV53


@njit(cache=True, nogil=True)
def _uniform_box(key, lo, shape, draw):
    d = lo.shape[0]
    n = 1
    for i in range(d):
        n *= shape[i]
    out = np.empty(n, dtype=np.float64)
    coord = lo.copy()
    salt = np.uint64(draw + 1) * GOLDEN
    for k in range(n):
        h = key
        for i in range(d):
            h = _mix64(h ^ _mix64(np.uint64(coord[i]) + GOLDEN))
        out[k] = _to_unit(_mix64(h + salt))
        # advance row-major odometer
        j = d - 1
        while j >= 0:
            coord[j] += 1
            if coord[j] < lo[j] + shape[j]:
                break
            coord[j] = lo[j]
            j -= 1
    return out


@njit(cache=True, nogil=True)
def _uniform_sites(key, sites, draw):
    n, d = sites.shape
    out = np.empty(n, dtype=np.float64)
    salt = np.uint64(draw + 1) * GOLDEN
    for k in range(n):
        h = key
        for i in range(d):
            h = _mix64(h ^ _mix64(np.uint64(sites[k, i]) + GOLDEN))
        out[k] = _to_unit(_mix64(h + salt))
    return out


@njit(cache=True)
def _derive(seed, stream, replication):
    h = _mix64(np.uint64(seed) + GOLDEN)
    h = _mix64(h ^ _mix64(np.uint64(stream) + GOLDEN))
    return _mix64(h ^ _mix64(np.uint64(replication) + GOLDEN))


def derive_key(seed: int, stream: int, replication: int = 0) -> np.uint64:
    """Mix ``(seed, stream, replication)`` into one 64-bit key."""
    return _derive(np.int64(seed), np.int64(stream), np.int64(replication))


def uniform_box(key, lo, shape, draw: int = 0) -> np.ndarray:
    """Uniforms on ``(0, 1)`` for every site of a box, shaped like the box.

    ``lo`` is the lowest corner and ``shape`` the side lengths; values come
    out in row-major (lexicographic) site order.
    """
    lo = np.asarray(lo, dtype=np.int64).reshape(-1)
    shape = np.asarray(shape, dtype=np.int64).reshape(-1)
    if np.any(shape < 0):
        raise ValueError("negative box shape")
    flat = _uniform_box(np.uint64(key), lo, shape, np.int64(draw))
    return flat.reshape(tuple(int(s) for s in shape))


def uniform_sites(key, sites, draw: int = 0) -> np.ndarray:
    sites = np.ascontiguousarray(np.atleast_2d(sites), dtype=np.int64)
    return _uniform_sites(np.uint64(key), sites, np.int64(draw))


def uniform_stream(seed: int, stream: int, replication: int, count: int, draw: int = 0) -> np.ndarray:
    """``count`` uniforms keyed by the counters ``0 .. count-1``."""
    key = derive_key(seed, stream, replication)
    return uniform_box(key, (0,), (count,), draw)
