import numpy as np
import pytest

from kzstream import ClusterParams, Dataset


@pytest.fixture
def params16():
    return ClusterParams(k=1, z=1, eps=0.25, d=1, delta=16, seed=7)


def make_params(**kw):
    base = dict(k=2, z=1, eps=0.25, d=2, delta=16, seed=7)
    base.update(kw)
    return ClusterParams(**base)


def uniform_lattice(rng: np.random.Generator, n: int, params: ClusterParams):
    coords = rng.integers(1, params.delta + 1, size=(n, params.d))
    return Dataset.from_coords([tuple(int(c) for c in row) for row in coords], params)


def two_cluster_instance(rng: np.random.Generator, per_side: int,
                         params: ClusterParams, spread: int = 1):
    lo_c = params.delta // 4
    hi_c = 3 * params.delta // 4
    pts = []
    for center in (lo_c, hi_c):
        base = np.full(params.d, center)
        jitter = rng.integers(-spread, spread + 1, size=(per_side, params.d))
        pts.extend(tuple(int(v) for v in np.clip(base + row, 1, params.delta))
                   for row in jitter)
    return Dataset.from_coords(pts, params)
