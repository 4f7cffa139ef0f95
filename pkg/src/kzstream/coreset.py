"""Offline sensitivity-sampling coresets, the merge-and-reduce tree, and the
net-based coreset verifier.

The reduce step reuses the clustering-charge sensitivity bound (approximate
solution plus per-cluster counts), so the tree is self-contained: no oracle
calls on the hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import (
    COMBINATION_BUDGET,
    CenterSet,
    Dataset,
    WeightedPoint,
    _pairwise_dist_z,
    candidate_net,
    enumeration_budget_guard,
    iter_subset_cost_chunks,
    solve_approx,
)
from .errors import ParseError, UsageError
from .meter import MemoryMeter
from .params import ClusterParams, PipelineConfig
from .rng import derive_seed, u01
from . import wire


@dataclass
class Coreset:
    """A weighted point multiset plus the accuracy contract it certifies."""

    items: list[WeightedPoint]
    eps_contract: float
    params: ClusterParams
    provenance: str = "offline-sample"

    def __len__(self) -> int:
        return len(self.items)

    def as_dataset(self) -> Dataset:
        return Dataset(self.items, self.params, validate=False)

    def total_weight(self) -> Fraction:
        return sum((wp.weight for wp in self.items), Fraction(0))


def clustering_charge_sensitivities(X: Dataset, params: ClusterParams,
                                    config: PipelineConfig | None = None,
                                    seed: int | None = None) -> np.ndarray:
    """Per-point sensitivity upper bounds from one approximate clustering.

    Each weighted point is charged its share of the clustering cost plus an
    inverse-cluster-mass term, scaled by the solver's assumed cost ratio.
    """
    config = config or PipelineConfig()
    n = len(X)
    if n == 0:
        return np.zeros(0)
    seed = params.seed if seed is None else seed
    sol, total, assign = solve_approx(X, params, params.k, seed=seed,
                                      config=config)
    w = X.weight_array
    if sol.size == 0:
        return np.ones(n)
    D = _pairwise_dist_z(X.array, sol.array, params.z)
    dz = D[np.arange(n), assign]
    cluster_w = np.bincount(assign, weights=w, minlength=sol.size)
    z = params.z
    unit = np.zeros(n)
    if total > 0:
        unit += config.alpha * 2**z * dz / total
    unit += 3.0 * 2 ** (2 * z - 1) / np.maximum(cluster_w[assign], 1e-12)
    return np.minimum(1.0, w * unit)


def build_coreset_offline(X: Dataset, params: ClusterParams, sens,
                          eps: float | None = None,
                          config: PipelineConfig | None = None,
                          seed: int | None = None,
                          decision: Callable[[int, float], bool] | None = None,
                          provenance: str = "offline-sample",
                          target_size: int | None = None) -> Coreset:
    """Independent Bernoulli sampling without replacement at p = min(1, f*q).

    Sampled points keep their original weight divided by p.  `decision`
    overrides the per-item keyed Bernoulli draw (used to cross-check against
    the two-pass universe sampler).  When target_size is given, the sampling
    factor is capped so the expected output size stays near the target while
    probabilities remain proportional to the sensitivity bounds.
    """
    config = config or PipelineConfig()
    eps = params.eps if eps is None else eps
    sens = np.asarray([float(q) for q in sens])
    if len(sens) != len(X):
        raise UsageError("need one sensitivity bound per point")
    if len(X) and sens.min() <= 0:
        raise UsageError("sensitivity bounds must be positive")
    seed = params.seed if seed is None else seed
    eff = ClusterParams(params.k, params.z, eps, params.d, params.delta,
                        params.seed)
    factor = config.sample_factor(eff)
    if target_size is not None and len(X):
        total = float(sens.sum())
        if total > 0:
            factor = min(factor, target_size / total)
    items = []
    for i, wp in enumerate(X.points):
        p = config.quantize_prob(min(1.0, factor * sens[i]))
        take = (decision(i, p) if decision is not None
                else u01(seed, "offline", i) < p)
        if take:
            items.append(WeightedPoint(wp.point, wp.weight / Fraction(p)))
    return Coreset(items, eps, params, provenance)


def merge_coresets(a: Coreset, b: Coreset) -> Coreset:
    """Merging coresets of disjoint sets keeps the worse of the contracts."""
    return Coreset(a.items + b.items, max(a.eps_contract, b.eps_contract),
                   a.params, "merge-reduce")


class MergeReduceTree:
    """Binary merge-and-reduce over fixed-size blocks.

    Level-t buffers summarize exactly 2^t blocks; at most one live buffer per
    level.  Each reduce resamples the merged pair at the per-level accuracy,
    compounding contracts multiplicatively.
    """

    def __init__(self, params: ClusterParams, config: PipelineConfig | None = None,
                 meter: MemoryMeter | None = None, seed: int | None = None,
                 meter_component: str = "tree"):
        self.params = params
        self.config = config or PipelineConfig()
        self.block_size = self.config.resolved_block_size(params)
        self.eps_level = self.config.eps_per_level(params)
        self.reduce_target = self.config.reduce_size(params)
        self.levels_budget = max(
            1, math.ceil(math.log2(max(
                2, self.config.expected_stream_len / self.block_size))))
        self.buffers: list[Coreset | None] = []
        self.partial: list[WeightedPoint] = []
        self.meter = meter
        self.meter_component = meter_component
        self.seed = derive_seed(params.seed if seed is None else seed, "tree")
        self.n_inserted = 0
        self.n_reduces = 0
        self.overrun = False

    # -- metering ------------------------------------------------------------

    def stored_items(self) -> int:
        return len(self.partial) + sum(
            len(b) for b in self.buffers if b is not None)

    def _meter(self) -> None:
        if self.meter is not None:
            self.meter.set(self.meter_component,
                           self.stored_items() * (self.params.d + 1))

    def live_buffer_count(self) -> int:
        return sum(1 for b in self.buffers if b is not None)

    # -- stream side -----------------------------------------------------------

    def insert(self, wp: WeightedPoint) -> None:
        self.partial.append(wp)
        self.n_inserted += 1
        if len(self.partial) >= self.block_size:
            block = Coreset(self.partial, 0.0, self.params, "merge-reduce")
            self.partial = []
            self._carry(block, 0)
        self._meter()

    def _carry(self, summary: Coreset, level: int) -> None:
        while level < len(self.buffers) and self.buffers[level] is not None:
            merged = merge_coresets(self.buffers[level], summary)
            self.buffers[level] = None
            summary = self._reduce(merged, level)
            level += 1
        while len(self.buffers) <= level:
            self.buffers.append(None)
        if level >= self.levels_budget:
            self.overrun = True
        self.buffers[level] = summary

    def _reduce(self, merged: Coreset, level: int) -> Coreset:
        if len(merged) <= self.reduce_target:
            return merged  # small enough already: identity reduce, no new error
        data = merged.as_dataset()
        q = clustering_charge_sensitivities(
            data, self.params, self.config,
            seed=derive_seed(self.seed, "reduce-sens", self.n_reduces))
        out = build_coreset_offline(
            data, self.params, q, eps=self.eps_level, config=self.config,
            seed=derive_seed(self.seed, "reduce", self.n_reduces),
            provenance="merge-reduce", target_size=self.reduce_target)
        self.n_reduces += 1
        # snap weights back to the dyadic grid so they stay word-sized at any
        # tree depth; the relative snap error is folded into the level budget
        scale = 1 << self.config.prob_bits
        items = []
        for wp in out.items:
            num = max(1, round(wp.weight * scale))
            items.append(WeightedPoint(wp.point, Fraction(num, scale)))
        eps = (1.0 + merged.eps_contract) * (1.0 + self.eps_level) - 1.0
        return Coreset(items, eps, self.params, "merge-reduce")

    def query(self) -> Coreset:
        """Merge all live buffers (no re-reduction) into one coreset."""
        items: list[WeightedPoint] = []
        eps = 0.0
        for b in self.buffers:
            if b is not None:
                items.extend(b.items)
                eps = max(eps, b.eps_contract)
        items.extend(self.partial)
        return Coreset(items, eps, self.params, "merge-reduce")


def merge_reduce_insert(tree: MergeReduceTree, wp: WeightedPoint) -> None:
    tree.insert(wp)


def merge_reduce_query(tree: MergeReduceTree) -> Coreset:
    return tree.query()


def verify_coreset(S: Coreset, X: Dataset, candidate_grid_step: float,
                   budget: int = COMBINATION_BUDGET,
                   eps: float | None = None):
    """Check the two-sided coreset bound over every k-subset of the net.

    Returns (passed, worst_ratio, witness): the ratio coreset/original that
    deviates most from 1, and the center set achieving it.
    """
    params = X.params
    eps = S.eps_contract if eps is None else eps
    if len(X) == 0:
        return (len(S) == 0), 1.0, None
    if len(S) == 0:
        return False, 0.0, None
    cands = candidate_net(params, candidate_grid_step, data=X)
    enumeration_budget_guard(len(cands), params.k, budget)
    DX = _pairwise_dist_z(cands, X.array, params.z)
    Sd = S.as_dataset()
    DS = _pairwise_dist_z(cands, Sd.array, params.z)
    wX, wS = X.weight_array, Sd.weight_array

    worst_ratio, worst_dev, witness = 1.0, 0.0, None
    passed = True
    gen_x = iter_subset_cost_chunks(DX, wX, params.k)
    gen_s = iter_subset_cost_chunks(DS, wS, params.k)
    for (idx, cx), (_, cs) in zip(gen_x, gen_s):
        tol = 1e-9 * (1.0 + np.abs(cx))
        ok = (cs >= (1.0 - eps) * cx - tol) & (cs <= (1.0 + eps) * cx + tol)
        if not ok.all():
            passed = False
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(cx > 0, cs / np.maximum(cx, 1e-300),
                             np.where(cs > 0, np.inf, 1.0))
        dev = np.abs(np.log(np.maximum(ratio, 1e-300)))
        pos = int(np.argmax(dev))
        if dev[pos] > worst_dev:
            worst_dev = float(dev[pos])
            worst_ratio = float(ratio[pos])
            witness = CenterSet([tuple(cands[i]) for i in idx[pos]])
    return passed, worst_ratio, witness


# -- serialization -------------------------------------------------------------

_HEADER = "KZCORESET v1"


def _fmt_coord(c: float) -> str:
    if float(c).is_integer():
        return str(int(c))
    return repr(float(c))


def write_coreset_text(S: Coreset, path) -> None:
    with open(path, "w") as fh:
        fh.write(coreset_to_text(S))


def coreset_to_text(S: Coreset) -> str:
    p = S.params
    lines = [f"{_HEADER} {p.d} {p.k} {p.z} {S.eps_contract!r}"]
    for wp in S.items:
        w = wp.weight
        coords = " ".join(_fmt_coord(c) for c in wp.point)
        lines.append(f"{w.numerator}/{w.denominator} {coords}")
    return "\n".join(lines) + "\n"


def read_coreset_text(path, params: ClusterParams) -> Coreset:
    with open(path) as fh:
        return coreset_from_text(fh.read(), params)


def coreset_from_text(text: str, params: ClusterParams) -> Coreset:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty coreset file", line=1)
    head = lines[0].split()
    if head[:2] != _HEADER.split() or len(head) != 6:
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    d, k, z = int(head[2]), int(head[3]), int(head[4])
    eps = float(head[5])
    if (d, k, z) != (params.d, params.k, params.z):
        raise ParseError(
            f"header (d,k,z)=({d},{k},{z}) does not match params "
            f"({params.d},{params.k},{params.z})", line=1)
    items = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != d + 1 or "/" not in parts[0]:
            raise ParseError(f"bad record {line!r}", line=ln)
        num, den = parts[0].split("/", 1)
        try:
            weight = Fraction(int(num), int(den))
            coords = tuple(int(c) if "." not in c and "e" not in c else float(c)
                           for c in parts[1:])
        except ValueError as exc:
            raise ParseError(str(exc), line=ln) from exc
        items.append(WeightedPoint(coords, weight))
    return Coreset(items, eps, params, "offline-sample")


def coreset_to_bytes(S: Coreset) -> bytes:
    """Binary mirror with varint coordinates and weights; this is the form
    the meter-honesty invariant audits."""
    out = bytearray(b"KZCS1")
    import struct
    p = S.params
    wire.write_varint(out, p.d)
    wire.write_varint(out, p.k)
    wire.write_varint(out, p.z)
    out.extend(struct.pack("<d", S.eps_contract))
    wire.write_varint(out, len(S.items))
    for wp in S.items:
        all_int = all(float(c).is_integer() for c in wp.point)
        unit = wp.weight == 1
        out.append((1 if all_int else 0) | (2 if unit else 0))
        if all_int:
            for c in wp.point:
                wire.write_signed(out, int(c))
        else:
            for c in wp.point:
                out.extend(struct.pack("<d", float(c)))
        if not unit:
            wire.write_varint(out, wp.weight.numerator)
            wire.write_varint(out, wp.weight.denominator)
    return bytes(out)


def coreset_from_bytes(buf: bytes, params: ClusterParams) -> Coreset:
    import struct
    if buf[:5] != b"KZCS1":
        raise ParseError("bad magic")
    pos = 5
    d, pos = wire.read_varint(buf, pos)
    k, pos = wire.read_varint(buf, pos)
    z, pos = wire.read_varint(buf, pos)
    eps = struct.unpack_from("<d", buf, pos)[0]
    pos += 8
    n, pos = wire.read_varint(buf, pos)
    items = []
    for _ in range(n):
        flags = buf[pos]
        pos += 1
        coords = []
        for _ in range(d):
            if flags & 1:
                c, pos = wire.read_signed(buf, pos)
            else:
                c = struct.unpack_from("<d", buf, pos)[0]
                pos += 8
            coords.append(c)
        if flags & 2:
            weight = Fraction(1)
        else:
            num, pos = wire.read_varint(buf, pos)
            den, pos = wire.read_varint(buf, pos)
            weight = Fraction(num, den)
        items.append(WeightedPoint(tuple(coords), weight))
    return Coreset(items, eps, params, "offline-sample")
