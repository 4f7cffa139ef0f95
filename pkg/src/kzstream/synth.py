"""Synthetic instance generators for benchmarks and experiments."""

from __future__ import annotations

import numpy as np

from .params import ClusterParams
from .rng import derive_rng


def uniform_points(n: int, params: ClusterParams, seed: int | None = None):
    rng = derive_rng(params.seed if seed is None else seed, "uniform", n)
    coords = rng.integers(1, params.delta + 1, size=(n, params.d))
    return [tuple(int(c) for c in row) for row in coords]


def cluster_points(n: int, params: ClusterParams, centers: int = 4,
                   spread_frac: float = 0.02, noise_frac: float = 0.05,
                   seed: int | None = None):
    """The standard benchmark mixture: a few tight lattice clusters plus a
    sprinkle of uniform noise."""
    rng = derive_rng(params.seed if seed is None else seed, "mixture", n)
    ctrs = rng.integers(params.delta // 8, 7 * params.delta // 8 + 1,
                        size=(centers, params.d))
    spread = max(1.0, spread_frac * params.delta)
    labels = rng.integers(0, centers, size=n)
    pts = ctrs[labels] + rng.normal(0.0, spread, size=(n, params.d))
    noise = rng.random(n) < noise_frac
    pts[noise] = rng.integers(1, params.delta + 1, size=(int(noise.sum()),
                                                         params.d))
    pts = np.clip(np.rint(pts), 1, params.delta).astype(int)
    return [tuple(int(c) for c in row) for row in pts]


def iter_cluster_stream(n: int, params: ClusterParams, seed: int | None = None,
                        batch: int = 65536):
    """Streaming version of the benchmark mixture (constant working memory)."""
    rng = derive_rng(params.seed if seed is None else seed, "mixture", n)
    centers = 4
    ctrs = rng.integers(params.delta // 8, 7 * params.delta // 8 + 1,
                        size=(centers, params.d))
    spread = max(1.0, 0.02 * params.delta)
    remaining = n
    while remaining > 0:
        m = min(batch, remaining)
        remaining -= m
        labels = rng.integers(0, centers, size=m)
        pts = ctrs[labels] + rng.normal(0.0, spread, size=(m, params.d))
        noise = rng.random(m) < 0.05
        pts[noise] = rng.integers(1, params.delta + 1,
                                  size=(int(noise.sum()), params.d))
        pts = np.clip(np.rint(pts), 1, params.delta).astype(int)
        for row in pts:
            yield tuple(int(c) for c in row)


def dynamic_updates(n: int, params: ClusterParams, delete_frac: float = 0.3,
                    seed: int | None = None):
    """A well-formed dynamic stream: n inserts from the benchmark mixture,
    then deletions of a random subset, interleaved after their inserts."""
    rng = derive_rng(params.seed if seed is None else seed, "dynamic", n)
    pts = cluster_points(n, params, seed=seed)
    n_del = int(round(delete_frac * n))
    del_idx = set(int(i) for i in rng.choice(n, size=n_del, replace=False))
    updates = []
    pending = []
    for i, p in enumerate(pts):
        updates.append((p, 1))
        if i in del_idx:
            pending.append(p)
        if pending and rng.random() < 0.5:
            updates.append((pending.pop(0), -1))
    updates.extend((p, -1) for p in pending)
    survivors = [p for i, p in enumerate(pts) if i not in del_idx]
    return updates, survivors


def adjacent_pairs(n_pairs: int, delta: int, seed: int):
    """Pairs (a, a+/-1) with a uniform on the lattice; the partner direction
    flips inward at the borders."""
    rng = derive_rng(seed, "pairs", n_pairs, delta)
    a = rng.integers(1, delta + 1, size=n_pairs)
    step = rng.choice([-1, 1], size=n_pairs)
    b = a + step
    flip = (b < 1) | (b > delta)
    b[flip] = a[flip] - step[flip]
    return a.astype(np.int64), b.astype(np.int64)
