"""Geometry, datasets, clustering cost, and the exact/approximate solvers.

Points are lattice points of [delta]^d stored as plain tuples; centers may
sit off-lattice (real coordinates).  Weights are exact rationals so coreset
reweighting by 1/p introduces no drift; costs are accumulated in double
precision with compensated summation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BudgetError, UsageError
from .params import ClusterParams
from .rng import derive_rng

#: Hard cap on (candidates choose k) for every desk-scale enumeration.
COMBINATION_BUDGET = 10_000_000

ONE = Fraction(1)


@dataclass(frozen=True)
class WeightedPoint:
    """A point with a positive exact-rational weight."""

    point: tuple
    weight: Fraction = ONE

    def __post_init__(self):
        if self.weight <= 0:
            raise UsageError(f"stored weights must be positive, got {self.weight}")


def as_weighted(points: Iterable, weights=None) -> list[WeightedPoint]:
    pts = [tuple(p) for p in points]
    if weights is None:
        return [WeightedPoint(p) for p in pts]
    ws = [w if isinstance(w, Fraction) else Fraction(w) for w in weights]
    return [WeightedPoint(p, w) for p, w in zip(pts, ws) if w != 0]


class Dataset:
    """An ordered weighted point sequence tied to one parameter block."""

    def __init__(self, points: Sequence[WeightedPoint], params: ClusterParams,
                 validate: bool = True):
        self.points = list(points)
        self.params = params
        if validate:
            for wp in self.points:
                check_point(wp.point, params)
        self._array = None
        self._weights = None

    @classmethod
    def from_coords(cls, coords: Iterable, params: ClusterParams, weights=None,
                    validate: bool = True) -> "Dataset":
        return cls(as_weighted(coords, weights), params, validate=validate)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def array(self) -> np.ndarray:
        if self._array is None or len(self._array) != len(self.points):
            self._array = np.asarray([wp.point for wp in self.points], dtype=float)
            if self._array.size == 0:
                self._array = self._array.reshape(0, self.params.d)
        return self._array

    @property
    def weight_array(self) -> np.ndarray:
        if self._weights is None or len(self._weights) != len(self.points):
            self._weights = np.asarray([float(wp.weight) for wp in self.points])
        return self._weights

    def total_weight(self) -> Fraction:
        return sum((wp.weight for wp in self.points), Fraction(0))


def check_point(point: Sequence, params: ClusterParams) -> None:
    if len(point) != params.d:
        raise UsageError(f"point has {len(point)} coordinates, expected {params.d}")
    for c in point:
        if not (0 <= c <= params.delta):
            raise UsageError(f"coordinate {c} outside [0, {params.delta}]")


class CenterSet:
    """Up to k' centers; coordinates may be off-lattice reals."""

    def __init__(self, centers: Iterable):
        pts = [tuple(float(x) for x in c) for c in centers]
        self.centers = pts
        self.array = np.asarray(pts, dtype=float) if pts else np.zeros((0, 0))

    @property
    def size(self) -> int:
        return len(self.centers)

    def __len__(self) -> int:
        return len(self.centers)

    def __iter__(self):
        return iter(self.centers)

    def __getitem__(self, i):
        return self.centers[i]

    def __repr__(self):
        return f"CenterSet({self.centers!r})"


class CostResult(NamedTuple):
    total: float
    assign: np.ndarray  # nearest-center index per point, ties to lowest index


def dist_z(a: Sequence, b: Sequence, z: int) -> float:
    """Euclidean distance between a and b raised to the z-th power."""
    if len(a) != len(b):
        raise UsageError(f"dimension mismatch: {len(a)} vs {len(b)}")
    sq = 0.0
    for ai, bi in zip(a, b):
        diff = float(ai) - float(bi)
        sq += diff * diff
    if z == 2:
        return sq
    root = math.sqrt(sq)
    return root if z == 1 else root**z

def _pairwise_dist_z(points: np.ndarray, centers: np.ndarray, z: int) -> np.ndarray:
    """(n, m) matrix of dist^z between row points and row centers."""
    diff = points[:, None, :] - centers[None, :, :]
    sq = np.einsum("nmd,nmd->nm", diff, diff)
    if z == 2:
        return sq
    np.sqrt(sq, out=sq)
    return sq if z == 1 else sq**z


def cost(X: Dataset, C: CenterSet) -> CostResult:
    """Weighted (k,z) clustering cost of X against C plus the assignment map."""
    if len(X) == 0:
        return CostResult(0.0, np.zeros(0, dtype=int))
    if C.size == 0:
        raise UsageError("cost queried against an empty center set")
    D = _pairwise_dist_z(X.array, C.array, X.params.z)
    assign = np.argmin(D, axis=1)
    best = D[np.arange(len(X)), assign]
    total = math.fsum(w * b for w, b in zip(X.weight_array, best))
    return CostResult(total, assign)


def cost_points(points: np.ndarray, weights: np.ndarray, centers: np.ndarray,
                z: int) -> float:
    """Array-level cost used in hot loops (no assignment, plain summation)."""
    if len(points) == 0:
        return 0.0
    D = _pairwise_dist_z(points, centers, z)
    return float(np.dot(weights, D.min(axis=1)))


def candidate_net(params: ClusterParams, step: float, data: Dataset | None = None,
                  pad: float = 0.0) -> np.ndarray:
    """The candidate center lattice: [1, delta] per axis refined to `step`,
    stretched to cover the data's bounding box when that is wider."""
    if step <= 0:
        raise UsageError(f"candidate_grid_step must be positive, got {step}")
    lo = np.ones(params.d)
    hi = np.full(params.d, float(params.delta))
    if data is not None and len(data) > 0:
        lo = np.minimum(lo, data.array.min(axis=0)) - pad
        hi = np.maximum(hi, data.array.max(axis=0)) + pad
    axes = []
    for j in range(params.d):
        count = int(math.floor((hi[j] - lo[j]) / step + 1e-9)) + 1
        axes.append(lo[j] + step * np.arange(count))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def enumeration_budget_guard(n_candidates: int, k: int,
                             budget: int = COMBINATION_BUDGET) -> int:
    combos = math.comb(n_candidates, k)
    if combos > budget:
        raise BudgetError(
            f"C({n_candidates},{k}) = {combos} candidate subsets exceeds the "
            f"enumeration budget of {budget}"
        )
    return combos


def iter_subset_cost_chunks(D: np.ndarray, weights: np.ndarray, k: int,
                            chunk: int = 4096):
    """Yield (subset index array, cost array) over all k-subsets of rows of D.

    D has shape (n_candidates, n_points); subsets iterate in lexicographic
    order, which is what makes tie-breaking deterministic.  Work is batched
    so the enumeration stays vectorized.
    """
    combos = itertools.combinations(range(D.shape[0]), k)
    while True:
        batch = list(itertools.islice(combos, chunk))
        if not batch:
            return
        idx = np.asarray(batch, dtype=np.intp)
        mins = D[idx[:, 0]]
        for col in range(1, k):
            mins = np.minimum(mins, D[idx[:, col]])
        yield idx, mins @ weights


def solve_exact(X: Dataset, params: ClusterParams, candidate_grid_step: float,
                budget: int = COMBINATION_BUDGET):
    """Brute-force (k,z) minimizer over k-subsets of the candidate lattice.

    Deterministic; ties resolve to the lexicographically smallest subset.
    Refuses instances whose subset count exceeds the budget.
    """
    if len(X) == 0:
        return CenterSet([]), 0.0
    cands = candidate_net(params, candidate_grid_step, data=X)
    enumeration_budget_guard(len(cands), params.k, budget)
    D = _pairwise_dist_z(cands, X.array, params.z)
    w = X.weight_array
    best_cost = math.inf
    best_subset = None
    for idx, costs in iter_subset_cost_chunks(D, w, params.k):
        pos = int(np.argmin(costs))
        total = float(costs[pos])
        if best_subset is None or total < best_cost - 1e-12 * (1.0 + abs(best_cost)):
            best_cost = total
            best_subset = idx[pos]
    centers = CenterSet([tuple(cands[i]) for i in best_subset])
    return centers, best_cost


def _seed_centers(P: np.ndarray, w: np.ndarray, num: int, z: int,
                  rng: np.random.Generator) -> list[int]:
    """Greedy seeding: sample proportionally to weight times dist^z."""
    n = len(P)
    probs = w / w.sum()
    first = int(rng.choice(n, p=probs))
    chosen = [first]
    dmin = _pairwise_dist_z(P, P[[first]], z)[:, 0]
    while len(chosen) < num:
        mass = w * dmin
        total = mass.sum()
        if total <= 0:
            remaining = [i for i in range(n) if i not in chosen]
            if not remaining:
                break
            chosen.append(int(rng.choice(remaining)))
            continue
        nxt = int(rng.choice(n, p=mass / total))
        chosen.append(nxt)
        dmin = np.minimum(dmin, _pairwise_dist_z(P, P[[nxt]], z)[:, 0])
    return chosen


def _cluster_representatives(P: np.ndarray, w: np.ndarray, assign: np.ndarray,
                             num: int, z: int) -> list[np.ndarray]:
    """Per-cluster centroid (z=2) or coordinate-wise weighted median."""
    reps = []
    for j in range(num):
        mask = assign == j
        if not mask.any():
            continue
        pts, ws = P[mask], w[mask]
        if z == 2:
            reps.append(np.average(pts, axis=0, weights=ws))
        else:
            rep = np.empty(P.shape[1])
            order_ws = ws / ws.sum()
            for axis in range(P.shape[1]):
                order = np.argsort(pts[:, axis])
                cum = np.cumsum(order_ws[order])
                rep[axis] = pts[order[np.searchsorted(cum, 0.5)], axis]
            reps.append(rep)
    return reps


def solve_approx(X: Dataset, params: ClusterParams, num_centers: int | None = None,
                 seed: int | None = None, config=None):
    """Seeded dist^z-proportional seeding plus local-search swaps.

    Returns (CenterSet, cost, assignment).  Deterministic given the seed.
    When num_centers exceeds the number of distinct points, returns all
    distinct points (cost 0).
    """
    if num_centers is None:
        num_centers = params.k
    if len(X) == 0:
        return CenterSet([]), 0.0, np.zeros(0, dtype=int)
    seed = params.seed if seed is None else seed
    swap_pool = config.swap_pool if config is not None else 24
    max_rounds = config.solver_max_rounds if config is not None else 12

    P, w = X.array, X.weight_array
    distinct = np.unique(P, axis=0)
    if len(distinct) <= num_centers:
        centers = CenterSet([tuple(p) for p in distinct])
        res = cost(X, centers)
        return centers, res.total, res.assign

    rng = derive_rng(seed, "solve-approx", len(X), num_centers)
    chosen = _seed_centers(P, w, num_centers, params.z, rng)
    centers = P[chosen].copy()

    accept = 1.0 + params.eps / max(1, params.k)
    for _ in range(max_rounds):
        D = _pairwise_dist_z(P, centers, params.z)
        assign = np.argmin(D, axis=1)
        order = np.argsort(D, axis=1)
        best = D[np.arange(len(P)), order[:, 0]]
        second = D[np.arange(len(P)), order[:, 1]] if centers.shape[0] > 1 else best
        current = float(np.dot(w, best))
        if current <= 0:
            break

        pool_idx = rng.choice(len(P), size=min(swap_pool, len(P)), replace=False)
        cand_pts = [P[i] for i in pool_idx]
        cand_pts.extend(_cluster_representatives(P, w, assign, centers.shape[0],
                                                 params.z))
        cands = np.asarray(cand_pts)
        Dc = _pairwise_dist_z(P, cands, params.z)

        best_gain, best_swap = 1.0, None
        for j in range(centers.shape[0]):
            fallback = np.where(assign == j, second, best)
            for ci in range(len(cands)):
                new_cost = float(np.dot(w, np.minimum(fallback, Dc[:, ci])))
                if new_cost <= 0:
                    gain = math.inf
                else:
                    gain = current / new_cost
                if gain > best_gain:
                    best_gain, best_swap = gain, (j, ci, new_cost)
        if best_swap is None or best_gain <= accept:
            break
        j, ci, _ = best_swap
        centers[j] = cands[ci]

    result = CenterSet([tuple(c) for c in centers])
    res = cost(X, result)
    return result, res.total, res.assign
