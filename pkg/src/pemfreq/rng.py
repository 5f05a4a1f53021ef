"""Counter-based random streams.

Every draw is a pure function of ``(seed, device, step, stream)``, so device
updates can run in any order or on any number of threads and still produce
identical results.
"""
import math

import numba
import numpy as np

# stream ids
REQUEST = 1
DRAW_EVENT = 2
DRAW_VOLUME = 3
NOISE_A = 4
NOISE_B = 5
INIT_TEMPERATURE = 6
ACCEPT_OFFSET = 7

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def hash64(seed, device, step, stream):
    h = _mix(np.uint64(seed) + _GOLDEN)
    h = _mix(h ^ (np.uint64(device) + _GOLDEN))
    h = _mix(h ^ (np.uint64(step) * _GOLDEN))
    h = _mix(h ^ np.uint64(stream))
    return h


@numba.njit(cache=True)
def uniform(seed, device, step, stream):
    """Uniform draw on [0, 1)."""
    return float(hash64(seed, device, step, stream) >> _S11) * _INV53


@numba.njit(cache=True)
def normal(seed, device, step):
    """Standard normal draw (Box-Muller on two independent streams)."""
    u1 = 1.0 - uniform(seed, device, step, NOISE_A)
    u2 = uniform(seed, device, step, NOISE_B)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

