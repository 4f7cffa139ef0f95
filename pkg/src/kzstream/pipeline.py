"""One-pass insertion-only pipeline, and the cost-only variant.

The sampler draws each arriving point by its estimated online sensitivity
and feeds the survivors (weighted by inverse probability) into a
merge-and-reduce tree; the tree's current coreset is in turn the substrate
the sampler reclusters whenever the stream doubles, closing the feedback
loop: the summary drives the sampling that maintains the summary.

The cost-only variant first projects points to a seeded Gaussian sketch of
dimension m (quartic in the cost exponent, logarithmic in k), re-snaps them
to the lattice, and runs the same pipeline in the projected space; only the
optimal cost survives the projection, not the centers.
"""

from __future__ import annotations

import math

import numpy as np

from .coreset import Coreset, MergeReduceTree
from .core import CenterSet, Dataset, WeightedPoint, solve_approx
from .meter import MemoryMeter
from .params import ClusterParams, PipelineConfig
from .rng import derive_rng, derive_seed
from .sensitivity import OnlineSampler


class InsertPipeline:
    """Sampler + tree + meter; the streaming state of the one-pass pipeline."""

    def __init__(self, params: ClusterParams, config: PipelineConfig | None = None,
                 meter: MemoryMeter | None = None, gamma: float | None = None):
        self.params = params
        self.config = config or PipelineConfig()
        self.meter = meter
        self.tree = MergeReduceTree(params, self.config, meter=meter)
        self.sampler = OnlineSampler(
            params, config=self.config, gamma=gamma,
            expected_len=self.config.expected_stream_len,
            substrate=lambda: self.tree.query().as_dataset())
        self.t = 0
        self._meter_sampler()

    def _meter_sampler(self) -> None:
        if self.meter is None:
            return
        k = (self.sampler.approx_solution.size
             if self.sampler.approx_solution is not None else 0)
        words = k * (self.params.d + 1) + k + 4
        self.meter.set("sampler", words)

    def insert(self, point) -> None:
        point = tuple(point)
        sampled, weight, _ = self.sampler.process(point)
        if sampled:
            self.tree.insert(WeightedPoint(point, weight))
        self.t += 1
        self._meter_sampler()

    def query(self) -> Coreset:
        return self.tree.query()


def pipeline_insert(state: InsertPipeline, point) -> None:
    state.insert(point)


def pipeline_query(state: InsertPipeline) -> Coreset:
    return state.query()


class JlProjector:
    """Seeded Gaussian projection to m dimensions, re-snapped to the lattice.

    Data is centered before projecting, rescaled so typical spreads fit the
    box, then shifted back; `scale` is the multiplier distances pick up, so
    cost estimates in the projected space divide by scale^z.
    """

    def __init__(self, params: ClusterParams, config: PipelineConfig | None = None,
                 seed_tag="jl"):
        self.params = params
        config = config or PipelineConfig()
        self.m = config.jl_dim(params)
        rng = derive_rng(params.seed, seed_tag)
        self.matrix = rng.normal(size=(self.m, params.d)) / math.sqrt(self.m)
        self.scale = 1.0 / (2.0 * math.sqrt(params.d))

    def project(self, point) -> np.ndarray:
        """Raw projection (no lattice snapping); preserves pair distances."""
        return self.matrix @ np.asarray(point, dtype=float)

    def to_lattice(self, point) -> tuple:
        half = self.params.delta / 2.0
        centered = np.asarray(point, dtype=float) - half
        y = (self.matrix @ centered) * self.scale + half
        snapped = np.clip(np.rint(y), 1, self.params.delta)
        return tuple(int(v) for v in snapped)


def cost_only_pipeline(stream, params: ClusterParams,
                       config: PipelineConfig | None = None,
                       meter: MemoryMeter | None = None) -> float:
    """Project, run the insertion pipeline in m dimensions, and return the
    clustering cost of the final coreset mapped back to the original scale."""
    config = config or PipelineConfig()
    proj = JlProjector(params, config)
    params_m = params.with_dim(proj.m)
    if meter is not None:
        meter.add("projector", proj.m * params.d)
    pipe = InsertPipeline(params_m, config=config, meter=meter)
    for point in stream:
        pipe.insert(proj.to_lattice(point))
    S = pipe.query()
    if len(S) == 0:
        return 0.0
    _, cost_m, _ = solve_approx(S.as_dataset(), params_m, params.k,
                                seed=derive_seed(params.seed, "cost-only"),
                                config=config)
    return cost_m / proj.scale**params.z
