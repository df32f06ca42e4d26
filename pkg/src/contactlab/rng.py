"""Counter-based random streams.

Every variate consumed anywhere in the package is a pure function of
(seed, replica, site code, stream id, counter).  There is no sequential
generator state, so a site's event stream does not depend on the order in
which sites are touched, and the same stream can be regenerated bit-for-bit
inside a compiled kernel and at the Python API level.

The mixer is splitmix64: ``value(key, j) = mix64(key + j * GOLDEN)``.  Stream
keys are derived by chaining the mixer over the identifying words.
"""

import numpy as np
from numba import njit, uint64

GOLDEN = uint64(0x9E3779B97F4A7C15)
_MUL1 = uint64(0xBF58476D1CE4E5B9)
_MUL2 = uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# Stream ids.  Backward (event-field) streams and forward streams are
# disjoint so the two samplers never share randomness.
HEAL_STREAM = 0
GREEN_STREAM = 1
ARROW_STREAM = 2
FORWARD_STREAM = 3
FWD_HEAL_STREAM = 4
FWD_GREEN_STREAM = 5
FWD_ARROW_STREAM = 6


@njit(cache=True, inline="always")
def mix64(z):
    z = z + GOLDEN
    z = (z ^ (z >> uint64(30))) * _MUL1
    z = (z ^ (z >> uint64(27))) * _MUL2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def stream_key(seed, replica, code, stream):
    """64-bit key identifying one stream of one site of one replica."""
    k = mix64(uint64(seed))
    k = mix64(k + uint64(replica))
    k = mix64(k + uint64(code))
    k = mix64(k + uint64(stream))
    return k


@njit(cache=True, inline="always")
def u01(key, j):
    """Uniform variate in [0, 1) at counter j.  Pure function of (key, j)."""
    return float((mix64(key + uint64(j) * GOLDEN) >> uint64(11))) * _INV53


@njit(cache=True)
def poisson_times(key, rate, horizon, stride):
    """Arrival times of a Poisson process on (-horizon, 0], sorted decreasing.

    The i-th interarrival consumes counter ``i * stride``, leaving the
    counters between multiples of ``stride`` free for per-event decorations
    (arrow sources and thinning marks use offsets 1 and 2).
    """
    if rate <= 0.0:
        return np.empty(0, np.float64)
    cap = int(rate * horizon + 10.0 * np.sqrt(rate * horizon) + 16.0)
    buf = np.empty(cap, np.float64)
    s = 0.0
    n = 0
    j = 0
    while True:
        u = u01(key, j)
        s += -np.log1p(-u) / rate
        if s > horizon:
            break
        if n == cap:
            cap *= 2
            grown = np.empty(cap, np.float64)
            grown[:n] = buf[:n]
            buf = grown
        buf[n] = -s
        n += 1
        j += stride
    return buf[:n].copy()


@njit(cache=True, inline="always")
def categorical(key, j, cumw):
    """Index into cumulative-weight table cumw (inclusive, last = total)."""
    u = u01(key, j)
    return np.searchsorted(cumw, u * cumw[-1], side="right")


@njit(cache=True, inline="always")
def exponential(key, j, rate):
    return -np.log1p(-u01(key, j)) / rate


def subseed(seed, *words):
    """Derive a decorrelated child seed for an independent experiment stage.

    Kept in the int64-safe range so it can be passed straight back into the
    compiled kernels.
    """
    k = int(stream_key(seed, 0, 0, 0))
    for w in words:
        k = int(mix64(uint64((k + int(w)) & 0xFFFFFFFFFFFFFFFF)))
    return k & 0x7FFFFFFFFFFFFFFF
