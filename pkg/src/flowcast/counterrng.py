"""Counter-based random draws for measurement noise.

Every draw is a pure function of (seed, key0, key1, draw index), so noise on
one (sample, channel) pair never depends on how many other elements exist or
on evaluation order.  That keeps noise reproducible when channels are added
to a placement and when samples are processed in parallel.

Implementation: SplitMix64-style avalanche mixing, vectorized over uint64
numpy arrays; uniforms come from the top 53 bits, normals via Box-Muller.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(x):
    """SplitMix64 finalizer, elementwise on uint64 arrays."""
    with np.errstate(over="ignore"):
        z = (x + _GAMMA) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * _M1) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * _M2) & _MASK
        return z ^ (z >> np.uint64(31))


def _hash(seed, key0, key1, draw):
    h = _mix64(np.uint64(seed) & _MASK)
    h = _mix64(h ^ (np.asarray(key0, dtype=np.uint64) & _MASK))
    h = _mix64(h ^ (np.asarray(key1, dtype=np.uint64) & _MASK))
    return _mix64(h ^ np.uint64(draw))


def uniform(seed, key0, key1, draw):
    """Uniform draws in the open interval (0, 1), one per broadcast element."""
    h = _hash(seed, key0, key1, draw)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(seed, key0, key1, draw):
    """Standard normal draws; consumes two counter slots (draw, draw+1)."""
    u1 = uniform(seed, key0, key1, draw)
    u2 = uniform(seed, key0, key1, draw + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
