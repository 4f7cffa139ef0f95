"""Randomly shifted grid embeddings of transport distances into L1.

One embedding is a hierarchy of nested grids with cell side 2^t for
t = 0..log2(delta), all offset by a common random shift.  A mass vector maps
to the concatenation of per-level cell-mass vectors, each level scaled by
2^t (optimal-transport mode) or (2^t sqrt(d))^z (z-th-power mode).  The map
is linear, so it composes with linear sketches; exact rational masses keep
linearity exact.

Also here: exact transport oracles on small supports (LP-based), the greedy
level-matching upper bound the contraction argument uses, and the bicriteria
center map that clones centers sitting too close to grid hyperplanes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

from .core import CenterSet, dist_z
from .errors import BudgetError, UsageError
from .params import ClusterParams
from .rng import derive_rng, derive_seed

TRANSPORT_SUPPORT_BUDGET = 64

_SCALE_BITS = 20


class MassVector:
    """Sparse signed rational mass assignment on lattice points."""

    def __init__(self, masses=None):
        self.masses: dict[tuple, Fraction] = {}
        if masses:
            for point, m in (masses.items() if isinstance(masses, dict)
                             else masses):
                self.add(point, m)

    @classmethod
    def point_mass(cls, point) -> "MassVector":
        return cls([(tuple(point), Fraction(1))])

    @classmethod
    def uniform(cls, points) -> "MassVector":
        pts = [tuple(p) for p in points]
        share = Fraction(1, len(pts))
        mv = cls()
        for p in pts:
            mv.add(p, share)
        return mv

    @classmethod
    def counts(cls, points) -> "MassVector":
        mv = cls()
        for p in points:
            mv.add(tuple(p), Fraction(1))
        return mv

    def add(self, point, mass) -> None:
        point = tuple(point)
        m = self.masses.get(point, Fraction(0)) + Fraction(mass)
        if m == 0:
            self.masses.pop(point, None)
        else:
            self.masses[point] = m

    def items(self):
        return self.masses.items()

    def support(self):
        return list(self.masses.keys())

    def total_mass(self) -> Fraction:
        return sum(self.masses.values(), Fraction(0))

    def __sub__(self, other: "MassVector") -> "MassVector":
        out = MassVector(dict(self.masses))
        for p, m in other.items():
            out.add(p, -m)
        return out

    def __add__(self, other: "MassVector") -> "MassVector":
        out = MassVector(dict(self.masses))
        for p, m in other.items():
            out.add(p, m)
        return out

    def scaled(self, factor) -> "MassVector":
        f = Fraction(factor)
        return MassVector({p: m * f for p, m in self.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, MassVector) and self.masses == other.masses

    def __len__(self) -> int:
        return len(self.masses)


class ShiftedGridEmbedding:
    """Linear map from mass vectors to scaled per-level cell masses.

    mode "emd" scales level t by 2^t; mode "wassz" by (2^t sqrt(d))^z.  The
    square-root factor is snapped to a dyadic rational so the map stays
    exactly linear over rational masses.
    """

    def __init__(self, params: ClusterParams, shift=None, mode: str = "emd",
                 seed_tag="embed"):
        if mode not in ("emd", "wassz"):
            raise UsageError(f"unknown embedding mode {mode!r}")
        self.params = params
        self.mode = mode
        self.z = 1 if mode == "emd" else params.z
        self.ell = params.ell
        if shift is None:
            rng = derive_rng(params.seed, seed_tag, mode)
            shift = tuple(int(v) for v in rng.integers(1, params.delta + 1,
                                                       params.d))
        self.shift = tuple(int(s) for s in shift)
        if len(self.shift) != params.d:
            raise UsageError("shift must have one offset per dimension")
        self._scales = [self._exact_scale(t) for t in range(self.ell + 1)]
        self.cell_masses: dict[tuple, Fraction] = {}

    # -- geometry -----------------------------------------------------------

    def _exact_scale(self, t: int) -> Fraction:
        if self.mode == "emd":
            return Fraction(2**t)
        base = Fraction(2**t) ** self.z
        root = self.params.d ** (self.z / 2.0)
        if self.params.z % 2 == 0:
            return base * self.params.d ** (self.z // 2)
        iroot = math.isqrt(self.params.d)
        if iroot * iroot == self.params.d:
            return base * iroot**self.z
        return base * Fraction(round(root * 2**_SCALE_BITS), 2**_SCALE_BITS)

    def scale(self, t: int) -> Fraction:
        return self._scales[t]

    def _check(self, point) -> tuple:
        point = tuple(point)
        if len(point) != self.params.d:
            raise UsageError(f"point dimension {len(point)} != {self.params.d}")
        for c in point:
            if not (0 <= c <= self.params.delta):
                raise UsageError(
                    f"coordinate {c} outside [0, {self.params.delta}]")
        return point

    def cell(self, point, t: int) -> tuple:
        return tuple(int(math.floor((c + s) / 2**t))
                     for c, s in zip(point, self.shift))

    def cell_key(self, t: int, cell: tuple) -> int:
        radix = 2 * self.params.delta + 3
        key = t
        for c in cell:
            key = key * radix + (c + 1)
        return key

    def point_keys(self, point) -> list[tuple[int, int]]:
        """(level, packed cell key) for all levels; half-open cell boundary."""
        point = self._check(point)
        return [(t, self.cell_key(t, self.cell(point, t)))
                for t in range(self.ell + 1)]

    def scaled_updates(self, point, delta_mass):
        """The sketch-facing view: (cell key, scaled mass delta) per level."""
        point = self._check(point)
        dm = Fraction(delta_mass)
        for t in range(self.ell + 1):
            yield self.cell_key(t, self.cell(point, t)), dm * self._scales[t]

    # -- streaming accumulator ------------------------------------------------

    def accumulate(self, point, delta_mass) -> None:
        point = self._check(point)
        dm = Fraction(delta_mass)
        for t in range(self.ell + 1):
            key = (t, self.cell(point, t))
            m = self.cell_masses.get(key, Fraction(0)) + dm * self._scales[t]
            if m == 0:
                self.cell_masses.pop(key, None)
            else:
                self.cell_masses[key] = m

    # -- pure map -----------------------------------------------------------

    def embed(self, mu: MassVector) -> dict:
        """Sparse scaled frequency vector of mu, keyed by (level, cell)."""
        out: dict[tuple, Fraction] = {}
        for point, mass in mu.items():
            point = self._check(point)
            for t in range(self.ell + 1):
                key = (t, self.cell(point, t))
                m = out.get(key, Fraction(0)) + mass * self._scales[t]
                if m == 0:
                    out.pop(key, None)
                else:
                    out[key] = m
        return out

    def l1_norm(self, vec: dict) -> float:
        return float(sum(abs(m) for m in vec.values()))

    def diff_norm(self, mu: MassVector, nu: MassVector) -> float:
        return self.l1_norm(self.embed(mu - nu))

    def level_raw_l1(self, vec: dict) -> list[Fraction]:
        """Per-level unscaled L1 mass of an embedded vector."""
        out = [Fraction(0)] * (self.ell + 1)
        for (t, _), m in vec.items():
            out[t] += abs(m) / self._scales[t]
        return out

    def greedy_matching_upper_bound(self, mu: MassVector, nu: MassVector) -> float:
        """Cost of the level-by-level greedy matching; a valid transport, so
        it upper-bounds the exact cost while staying below the scaled L1."""
        raw = self.level_raw_l1(self.embed(mu - nu))
        root_d = math.sqrt(self.params.d)
        total = 0.0
        for t in range(1, self.ell + 1):
            matched = max(Fraction(0), (raw[t - 1] - raw[t])) / 2
            total += float(matched) * (root_d * (2**t - 1)) ** self.z
        top = raw[self.ell] / 2
        total += float(top) * (root_d * self.params.delta) ** self.z
        return total


# -- exact transport oracles -----------------------------------------------------


def _lp_transport(P, p, Q, q, z: int, penalty: float | None):
    a, b = len(P), len(Q)
    diff = np.asarray(P, dtype=float)[:, None, :] - np.asarray(Q, dtype=float)[None, :, :]
    c = np.sqrt(np.einsum("abd,abd->ab", diff, diff)) ** z
    cflat = c.ravel()
    if penalty is None:
        A_eq = []
        b_eq = []
        for i in range(a):
            row = np.zeros(a * b)
            row[i * b:(i + 1) * b] = 1.0
            A_eq.append(row)
            b_eq.append(p[i])
        for j in range(b):
            row = np.zeros(a * b)
            row[j::b] = 1.0
            A_eq.append(row)
            b_eq.append(q[j])
        res = linprog(cflat, A_eq=np.asarray(A_eq), b_eq=np.asarray(b_eq),
                      bounds=(0, None), method="highs")
        if not res.success:
            raise RuntimeError(f"transport LP failed: {res.message}")
        return float(res.fun), res.x.reshape(a, b)
    # unequal masses: leftover mass pays the worst-case relocation penalty
    A_ub = []
    b_ub = []
    for i in range(a):
        row = np.zeros(a * b)
        row[i * b:(i + 1) * b] = 1.0
        A_ub.append(row)
        b_ub.append(p[i])
    for j in range(b):
        row = np.zeros(a * b)
        row[j::b] = 1.0
        A_ub.append(row)
        b_ub.append(q[j])
    obj = cflat - 2.0 * penalty
    res = linprog(obj, A_ub=np.asarray(A_ub), b_ub=np.asarray(b_ub),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    moved = res.x.sum()
    total = float(cflat @ res.x) + penalty * (sum(p) + sum(q) - 2.0 * moved)
    return total, res.x.reshape(a, b)


def transport_plan(mu: MassVector, nu: MassVector, params: ClusterParams,
                   z: int | None = None):
    """Exact optimal transport plan between equal-mass vectors.

    Returns (cost, edges) with edges = [(source point, sink point, mass)].
    Desk scale only: supports above the budget are refused.
    """
    z = params.z if z is None else z
    if any(m < 0 for m in mu.masses.values()) or any(
            m < 0 for m in nu.masses.values()):
        raise UsageError("transport requires nonnegative mass vectors")
    if len(mu) > TRANSPORT_SUPPORT_BUDGET or len(nu) > TRANSPORT_SUPPORT_BUDGET:
        raise BudgetError(
            f"transport supports {len(mu)}x{len(nu)} exceed the budget of "
            f"{TRANSPORT_SUPPORT_BUDGET} points per side")
    # mass shared at a common point never moves in an optimal transport
    edges = []
    residual_mu, residual_nu = MassVector(), MassVector()
    for pt, m in mu.items():
        shared = min(m, nu.masses.get(pt, Fraction(0)))
        if shared > 0:
            edges.append((pt, pt, shared))
        if m - shared > 0:
            residual_mu.add(pt, m - shared)
    for pt, m in nu.items():
        shared = min(m, mu.masses.get(pt, Fraction(0)))
        if m - shared > 0:
            residual_nu.add(pt, m - shared)

    if len(residual_mu) == 0 and len(residual_nu) == 0:
        return 0.0, edges
    P, p = (zip(*residual_mu.items()) if len(residual_mu) else ((), ()))
    Q, q = (zip(*residual_nu.items()) if len(residual_nu) else ((), ()))
    P, p, Q, q = list(P), list(p), list(Q), list(q)
    tp, tq = sum(p, Fraction(0)), sum(q, Fraction(0))
    pf = [float(m) for m in p]
    qf = [float(m) for m in q]
    if tp != tq or not P or not Q:
        penalty = float((params.d * params.delta) ** z)
        if not P or not Q:
            return penalty * float(tp + tq), edges
        cost, plan = _lp_transport(P, pf, Q, qf, z, penalty)
    elif len(P) == 1 and len(Q) == 1:
        return (float(p[0]) * dist_z(P[0], Q[0], z),
                edges + [(P[0], Q[0], p[0])])
    else:
        cost, plan = _lp_transport(P, pf, Q, qf, z, None)
    edges.extend((P[i], Q[j], plan[i, j]) for i in range(len(P))
                 for j in range(len(Q)) if plan[i, j] > 1e-12)
    return cost, edges


def emd_exact(mu: MassVector, nu: MassVector, params: ClusterParams) -> float:
    """Exact earth mover distance (z = 1) on small supports."""
    return transport_plan(mu, nu, params, z=1)[0]


def wassz_exact(mu: MassVector, nu: MassVector, params: ClusterParams,
                z: int | None = None) -> float:
    """Exact z-th power transport cost on small supports."""
    return transport_plan(mu, nu, params, z=z)[0]


# -- bicriteria center map -----------------------------------------------------


@dataclass
class CenterCopy:
    center_index: int
    level: int
    axis: int
    boundary: float
    point: tuple


@dataclass
class BicriteriaCenterMap:
    """Original centers plus hyperplane-projected copies (the closed set)."""

    original: CenterSet
    copies: list[CenterCopy] = field(default_factory=list)

    @property
    def flat_set(self) -> list[tuple]:
        seen: dict[tuple, None] = {}
        for c in self.original:
            seen.setdefault(tuple(c), None)
        for copy in self.copies:
            seen.setdefault(copy.point, None)
        return list(seen.keys())

    def copies_for(self, center_index: int) -> list[CenterCopy]:
        return [c for c in self.copies if c.center_index == center_index]


def phi_map(emb: ShiftedGridEmbedding, C: CenterSet) -> BicriteriaCenterMap:
    """Clone every center that sits within the bad-level threshold of a grid
    hyperplane, projecting the clone onto that hyperplane; top-down by level.
    """
    if emb.mode != "wassz":
        raise UsageError("bicriteria center map requires a wassz-mode embedding")
    params = emb.params
    log_delta = max(1, params.ell)
    out = BicriteriaCenterMap(C)
    for idx, center in enumerate(C):
        for level in range(params.ell, -1, -1):
            side = 2**level
            threshold = side / (params.d * log_delta)
            for axis in range(params.d):
                shifted = center[axis] + emb.shift[axis]
                nearest = round(shifted / side) * side
                dist = abs(shifted - nearest)
                if dist < threshold:
                    boundary = nearest - emb.shift[axis]
                    point = tuple(boundary if j == axis else center[j]
                                  for j in range(params.d))
                    out.copies.append(
                        CenterCopy(idx, level, axis, boundary, point))
    return out


def psi_transport(emb: ShiftedGridEmbedding, mu: MassVector, nu: MassVector,
                  center_map: BicriteriaCenterMap | None = None) -> MassVector:
    """Reroute transported mass to the separating-hyperplane copies.

    For every edge of the optimal transport between mu and nu whose endpoints
    straddle a cloned hyperplane of the sink center, the mass lands on the
    closest such clone instead of the center; everything else stays put.  The
    output is supported on the closed center set.
    """
    support = nu.support()
    if center_map is None:
        center_map = phi_map(emb, CenterSet(support))
    index_of = {tuple(p): i for i, p in enumerate(support)}
    _, edges = transport_plan(mu, nu, emb.params, z=emb.z)
    out = MassVector()
    for x, c, mass in edges:
        m = (mass if isinstance(mass, Fraction)
             else Fraction(mass).limit_denominator(1 << 40))
        candidates = []
        for copy in center_map.copies_for(index_of[tuple(c)]):
            lo, hi = sorted((x[copy.axis], c[copy.axis]))
            if lo <= copy.boundary <= hi and not (lo == hi == copy.boundary):
                candidates.append(copy)
        if candidates:
            best = min(candidates, key=lambda cp: dist_z(x, cp.point, emb.z))
            out.add(best.point, m)
        else:
            out.add(tuple(c), m)
    return out
