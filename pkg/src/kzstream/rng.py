"""Deterministic, replayable randomness.

Every random decision in the toolkit is a pure function of the master seed
and a tag path, so replays are reproducible and independent components get
independent streams.  Bulk variate generation (Cauchy sketch rows, Bernoulli
draws) uses a vectorized 64-bit finalizer rather than a stateful generator,
which is what makes per-point sampling decisions order-free.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def fold_key(seed: int, value: int) -> int:
    """Fold an arbitrary-size integer into a 64-bit hash state, limb by limb."""
    v = int(value)
    h = seed
    if v < 0:
        h = mix64(h ^ 0xD1B54A32D192ED03)
        v = -v
    while True:
        h = mix64(h ^ (v & _MASK))
        v >>= 64
        if not v:
            return h


def _fold(seed: int, part) -> int:
    if isinstance(part, str):
        h = seed
        for ch in part.encode():
            h = mix64(h ^ ch)
        return h
    if isinstance(part, (tuple, list)):
        h = seed
        for sub in part:
            h = _fold(h, sub)
        return h
    return fold_key(seed, part)


def derive_seed(master: int, *tags) -> int:
    """Derive an independent 64-bit subseed from a master seed and tag path."""
    h = mix64(master & _MASK)
    for tag in tags:
        h = _fold(h, tag)
    return h


def derive_rng(master: int, *tags) -> np.random.Generator:
    """A numpy Generator seeded from the derived subseed."""
    return np.random.default_rng(derive_seed(master, *tags))


def u01(master: int, *tags) -> float:
    """One uniform in [0, 1) from the derived subseed."""
    return (derive_seed(master, *tags) >> 11) * 2.0**-53


def keyed_uniforms(seed: int, key: int, n: int) -> np.ndarray:
    """n uniforms in the open interval (0, 1), a pure function of (seed, key).

    Vectorized SplitMix64 over the lane index; the half-ulp offset keeps the
    output strictly inside (0, 1) so heavy-tailed transforms stay finite.
    """
    base = np.uint64(derive_seed(seed, key))
    lanes = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (lanes * np.uint64(_GOLDEN)) ^ base
        z = (z + np.uint64(_GOLDEN)) & np.uint64(_MASK)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
