"""Streaming Euclidean (k,z)-clustering toolkit.

Insertion-only coreset pipelines built on online sensitivity sampling and
merge-and-reduce, two-pass dynamic-stream coresets built from shifted-grid
transport embeddings, L1 sketches and sparse recovery, plus brute-force
oracles and a word-level memory meter for desk-scale validation.
"""

from .params import ClusterParams, PipelineConfig
from .core import (
    CenterSet,
    Dataset,
    WeightedPoint,
    cost,
    dist_z,
    solve_approx,
    solve_exact,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterParams",
    "PipelineConfig",
    "CenterSet",
    "Dataset",
    "WeightedPoint",
    "cost",
    "dist_z",
    "solve_approx",
    "solve_exact",
    "__version__",
]
