"""Counter-based random streams.

Every random number is a pure function of ``(seed, lane, index, counter)``,
so a molecule's draws do not depend on which worker integrates it or in
which order.  The mixer is the SplitMix64 finaliser; a stream is SplitMix64
started from a hashed key and jumped directly to position ``counter``.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0

# lanes keep independent purposes (loading, dynamics, detection) decorrelated
LANE_LOAD = 1
LANE_DYNAMICS = 2
LANE_DETECT = 3


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def stream_key(seed, lane, index):
    k = mix64(np.uint64(seed) * _GOLDEN + np.uint64(lane))
    return mix64(k ^ (np.uint64(index) * _M1 + _GOLDEN))


@njit(cache=True, nogil=True)
def counter_uniform(key, counter):
    """Uniform double in [0, 1) at position ``counter`` of stream ``key``."""
    # a Python int key would be typed int64 and promote the sum to float64
    z = mix64(np.uint64(key) + (np.uint64(counter) + _ONE) * _GOLDEN)
    return float(z >> _S11) * _INV53


@njit(cache=True)
def _uniform_block(seed, lane, indices, n_draws, start):
    out = np.empty((indices.shape[0], n_draws))
    for i in range(indices.shape[0]):
        key = stream_key(seed, lane, indices[i])
        for j in range(n_draws):
            out[i, j] = counter_uniform(key, start + j)
    return out


def uniform_block(seed: int, lane: int, indices, n_draws: int, start: int = 0) -> np.ndarray:
    """Draws ``n_draws`` uniforms from each stream ``(seed, lane, i)``, beginning at ``start``."""
    idx = np.asarray(indices, dtype=np.int64)
    return _uniform_block(np.uint64(seed), np.int64(lane), idx, int(n_draws), np.int64(start))


class Stream:
    """Sequential view of one counter-based stream.

    Used by the single-molecule API; the compiled ensemble integrator walks the
    same ``(key, counter)`` sequence, so both paths agree draw for draw.
    """

    def __init__(self, seed: int, index: int, lane: int = LANE_DYNAMICS, counter: int = 0):
        self.key = np.uint64(stream_key(np.uint64(seed), np.int64(lane), np.int64(index)))
        self.counter = counter

    def uniform(self) -> float:
        u = counter_uniform(self.key, np.uint64(self.counter))
        self.counter += 1
        return u
