"""Two-pass dynamic-stream coresets.

Pass one feeds every signed update through linear sketches of shifted-grid
embeddings, then searches a coarse candidate lattice for the center set
whose sketch-estimated transport cost is smallest; that cost and center set
turn per-point sensitivity queries into closed-form evaluations.  Pass two
replays the stream, samples the point universe with a polynomial hash at
probabilities proportional to the sensitivity bounds, and tracks the
sampled universe slice in a sparse-recovery sketch, so deletions cancel
exactly and the surviving multiset decodes at the end.

In the general-exponent mode, sampled points are stored as offset codes
against the bicriteria center set (center id, per-coordinate sign, and the
offset magnitude's exponent in a near-1 base), which is what keeps each
sample's footprint logarithmic in the grid resolution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coreset import Coreset
from .core import (
    CenterSet,
    Dataset,
    WeightedPoint,
    _pairwise_dist_z,
    candidate_net,
    dist_z,
    enumeration_budget_guard,
    solve_approx,
)
from .embedding import MassVector, ShiftedGridEmbedding, phi_map
from .errors import UsageError
from .meter import MemoryMeter
from .params import ClusterParams, PipelineConfig
from .rng import derive_rng, derive_seed
from .sketches import CauchySketch, SparseRecoverySketch, TwiseHash, twise_sample

KMEDIAN = "kmedian"
KZ = "kz"


@dataclass(frozen=True)
class DynamicUpdate:
    point: tuple
    delta: int


def point_to_id(point, params: ClusterParams) -> int:
    """Mixed-radix packing, stable across passes."""
    key = 0
    for c in reversed(point):
        ci = int(c)
        if not (1 <= ci <= params.delta) or ci != c:
            raise UsageError(f"coordinate {c} outside the id range [1, delta]")
        key = key * params.delta + (ci - 1)
    return key


def id_to_point(key: int, params: ClusterParams) -> tuple:
    coords = []
    for _ in range(params.d):
        coords.append(key % params.delta + 1)
        key //= params.delta
    return tuple(coords)


def rounding_base(params: ClusterParams, override: float | None = None) -> float:
    if override is not None:
        return override
    log_delta = max(1, params.ell)
    return 1.0 + params.eps ** (2 * params.z) / (
        8.0 * params.d ** (1.5 * params.z) * log_delta ** (4 * params.z))


@dataclass(frozen=True)
class OffsetCode:
    """Sign/exponent encoding of a point's offset from its nearest center."""

    center_index: int
    signs: tuple
    exponents: tuple  # int exponent per coordinate, None for exact zero

    def pack(self, num_centers: int, exp_limit: int) -> int:
        radix = 2 * (exp_limit + 1) + 1
        key = 0
        for sign, exp in zip(self.signs, self.exponents):
            if exp is None:
                token = 0
            else:
                token = 1 + (1 if sign > 0 else 0) + 2 * exp
            if token >= radix:
                raise UsageError("offset exponent exceeds the packing limit")
            key = key * radix + token
        return key * num_centers + self.center_index

    @staticmethod
    def unpack(key: int, d: int, num_centers: int, exp_limit: int) -> "OffsetCode":
        radix = 2 * (exp_limit + 1) + 1
        center = key % num_centers
        key //= num_centers
        tokens = []
        for _ in range(d):
            tokens.append(key % radix)
            key //= radix
        signs, exps = [], []
        for token in reversed(tokens):
            if token == 0:
                signs.append(0)
                exps.append(None)
            else:
                signs.append(1 if (token - 1) & 1 else -1)
                exps.append((token - 1) // 2)
        return OffsetCode(center, tuple(signs), tuple(exps))


def code_bits(params: ClusterParams, num_centers: int, exp_limit: int) -> float:
    """Bits to store one offset code: center id plus d signed exponents."""
    return (math.log2(max(2, num_centers))
            + params.d * (1.0 + math.log2(exp_limit + 2)))


def _nearest_center(point, centers: CenterSet, z: int) -> tuple[int, float]:
    best, best_d = 0, math.inf
    for i, c in enumerate(centers):
        dv = dist_z(point, c, z)
        if dv < best_d - 1e-15:
            best, best_d = i, dv
    return best, best_d


def offset_encode(point, centers: CenterSet, params: ClusterParams,
                  base: float | None = None) -> OffsetCode:
    b = rounding_base(params, base)
    ln_b = math.log1p(b - 1.0)
    idx, _ = _nearest_center(point, centers, params.z)
    center = centers[idx]
    signs, exps = [], []
    for xj, cj in zip(point, center):
        y = float(xj) - float(cj)
        if y == 0.0 or abs(y) < 2.0**-20:
            signs.append(0)
            exps.append(None)
            continue
        mag = abs(y)
        e = int(math.floor(math.log(mag) / ln_b))
        while math.exp((e + 1) * ln_b) <= mag:
            e += 1
        while math.exp(e * ln_b) > mag * (1 + 1e-12):
            e -= 1
        signs.append(1 if y > 0 else -1)
        exps.append(max(0, e))
    return OffsetCode(idx, tuple(signs), tuple(exps))


def offset_decode(code: OffsetCode, centers: CenterSet, params: ClusterParams,
                  base: float | None = None) -> tuple:
    b = rounding_base(params, base)
    ln_b = math.log1p(b - 1.0)
    center = centers[code.center_index]
    coords = []
    for cj, sign, exp in zip(center, code.signs, code.exponents):
        if exp is None:
            coords.append(float(cj))
        else:
            coords.append(float(cj) + sign * math.exp(exp * ln_b))
    return tuple(coords)


def offset_roundtrip(point, centers: CenterSet, params: ClusterParams,
                     base: float | None = None):
    """Encode the offset (magnitudes rounded down to a power of the base),
    then decode; returns (code, decoded real-coordinate point)."""
    if centers.size == 0:
        raise UsageError("offset coding requires a nonempty center set")
    code = offset_encode(point, centers, params, base)
    return code, offset_decode(code, centers, params, base)


def exponent_limit(params: ClusterParams, base: float | None = None) -> int:
    b = rounding_base(params, base)
    return int(math.ceil(math.log(params.delta + 1) / math.log1p(b - 1.0))) + 1


class PassOneSummary:
    """Sketches, the chosen center set, its estimated cost, and the
    machinery to answer sensitivity queries in pass two."""

    def __init__(self, params: ClusterParams, mode: str, config: PipelineConfig,
                 embeddings, sketches, total_mass: int):
        self.params = params
        self.mode = mode
        self.config = config
        self.embeddings = embeddings
        self.sketches = sketches
        self.total_mass = total_mass
        self.empty = total_mass == 0
        self.S: CenterSet = CenterSet([])
        self.S_masses: np.ndarray = np.zeros(0)
        self.Z: float = 0.0
        self.gamma: float = 1.0
        self.Cprime: CenterSet = CenterSet([])
        self.hash_seed = derive_seed(params.seed, "universe-hash")
        self.hash = TwiseHash(config.twise_t, params.delta**params.d,
                              self.hash_seed)
        # candidate net shared by the search and the sensitivity queries
        self._net_points: np.ndarray | None = None
        self._subsets: np.ndarray | None = None
        self._denominators: np.ndarray | None = None
        self._q_cache: dict[tuple, float] = {}

    # -- sensitivity interface ------------------------------------------------

    def dilation_bound(self) -> float:
        d, k, z = self.params.d, self.params.k, self.params.z
        log_delta = max(2.0, float(self.params.ell))
        if self.mode == KMEDIAN:
            return self.config.dilation_const * d * (
                math.log2(2 * k) + math.log2(log_delta))
        return (self.config.dilation_const * d ** (1 + 0.5 * z)
                * log_delta ** (z - 1))

    def finalize(self, net_points: np.ndarray, subsets: np.ndarray,
                 best_subset: np.ndarray, masses, z_est: float) -> None:
        self._net_points = net_points
        self._subsets = subsets
        self.S = CenterSet([tuple(net_points[i]) for i in best_subset])
        self.S_masses = np.asarray([float(m) for m in masses])
        self.Z = z_est
        # measured span between the scaled estimate and the smallest cost
        # consistent with it; the sensitivity bound's leading factor
        lower_estimate = z_est * 2.0 / (
            math.sqrt(self.params.d) * self.dilation_bound())
        self.gamma = max(1.0, z_est / max(lower_estimate, 1e-300))
        # denominator per net subset C: the chosen centers weighted by their
        # estimated cluster masses, clustered against C, plus the estimate
        DC = _pairwise_dist_z(self.S.array, net_points, self.params.z)
        cost_s_c = np.zeros(len(subsets))
        if len(subsets):
            mins = DC[:, subsets[:, 0]]
            for col in range(1, subsets.shape[1]):
                mins = np.minimum(mins, DC[:, subsets[:, col]])
            cost_s_c = self.S_masses @ mins
        self._denominators = np.maximum(cost_s_c + self.Z, 1e-300)

    def sensitivity(self, point) -> float:
        """Upper bound q(x): the charge ratio maximized over the net."""
        if self.empty or self._net_points is None or not len(self._subsets):
            return 1.0
        key = tuple(point)
        cached = self._q_cache.get(key)
        if cached is not None:
            return cached
        z = self.params.z
        diff = self._net_points - np.asarray(point, dtype=float)
        sq = np.einsum("md,md->m", diff, diff)
        dx = sq if z == 2 else np.sqrt(sq) ** z
        mins = dx[self._subsets[:, 0]]
        for col in range(1, self._subsets.shape[1]):
            mins = np.minimum(mins, dx[self._subsets[:, col]])
        ratios = (2**z * 4.0 * self.gamma) * mins / self._denominators
        q = float(min(1.0, ratios.max()))
        q = max(q, 1e-12)
        self._q_cache[key] = q
        return q

    def sample_probability(self, point) -> float:
        p = self.config.sample_factor(self.params) * self.sensitivity(point)
        return self.config.quantize_prob(min(1.0, p))


def sensitivity_from_summary(summary: PassOneSummary, point,
                             params: ClusterParams | None = None) -> float:
    return summary.sensitivity(point)


def _candidate_subsets(params: ClusterParams, config: PipelineConfig):
    step = config.candidate_step or max(1.0, params.delta / 8)
    net = candidate_net(params, step)
    enumeration_budget_guard(len(net), params.k)
    subsets = np.asarray(
        list(itertools.combinations(range(len(net)), params.k)), dtype=np.intp)
    return net, subsets


def _mass_profiles(k: int, total, rng) -> list[list[Fraction]]:
    total = Fraction(total)
    if k == 1:
        return [[total]]
    profiles = [[total / k] * k]
    if k == 2:
        profiles.append([total / 4, 3 * total / 4])
        profiles.append([3 * total / 4, total / 4])
    else:
        for _ in range(2):
            cuts = sorted(rng.integers(0, 8 + 1, k - 1))
            shares = np.diff([0, *cuts, 8])
            if (shares == 0).any():
                continue
            profiles.append([total * int(s) / 8 for s in shares])
    return profiles


def pass_one(stream, params: ClusterParams, mode: str = KMEDIAN,
             config: PipelineConfig | None = None,
             meter: MemoryMeter | None = None) -> PassOneSummary:
    """Feed the updates through the embedding sketches, then pick the
    candidate center set with the smallest sketch-estimated cost."""
    if mode not in (KMEDIAN, KZ):
        raise UsageError(f"unknown mode {mode!r}")
    config = config or PipelineConfig()
    emb_mode = "emd" if mode == KMEDIAN else "wassz"
    ell = config.cauchy_ell(params)
    m = config.num_embeddings
    embeddings = [
        ShiftedGridEmbedding(params, mode=emb_mode, seed_tag=("embed", i))
        for i in range(m)]
    sketches = [CauchySketch(ell, derive_seed(params.seed, "l1", i))
                for i in range(m)]
    if meter is not None:
        meter.set_phase("pass1")
        meter.set("sketches", m * ell + m * params.d)

    total_mass = 0
    running = 0
    for upd in stream:
        point, delta = (upd.point, upd.delta) if isinstance(upd, DynamicUpdate) \
            else (tuple(upd[0]), int(upd[1]))
        running += delta
        if running < 0:
            raise UsageError("stream reached negative total multiplicity")
        total_mass = running
        for emb, sk in zip(embeddings, sketches):
            for key, scaled in emb.scaled_updates(point, delta):
                sk.update(key, scaled)

    summary = PassOneSummary(params, mode, config, embeddings, sketches,
                             total_mass)
    if summary.empty:
        return summary

    net, subsets = _candidate_subsets(params, config)
    rng = derive_rng(params.seed, "mass-profiles")
    profiles = _mass_profiles(params.k, total_mass, rng)
    snapshots = [sk.float_values() for sk in sketches]

    scores, profile_idx = _score_all_candidates(
        net, subsets, profiles, embeddings, sketches, snapshots)
    best_pos = int(np.argmin(scores))
    best_score = float(scores[best_pos])
    best_subset = subsets[best_pos]
    best_profile = profiles[int(profile_idx[best_pos])]

    contraction = math.sqrt(params.d) / 2.0 if mode == KMEDIAN else 0.5
    summary.finalize(net, subsets, best_subset, best_profile,
                     contraction * best_score)

    if mode == KZ:
        bmap = phi_map(embeddings[0], summary.S)
        summary.Cprime = CenterSet(bmap.flat_set)
        refined = _refine_on_closed_set(summary, snapshots, bmap)
        if refined is not None and refined < best_score:
            summary.finalize(net, subsets, best_subset, best_profile,
                             contraction * refined)
    else:
        summary.Cprime = summary.S
    return summary


def _point_profiles(net: np.ndarray, emb: ShiftedGridEmbedding,
                    sk: CauchySketch) -> np.ndarray:
    """Accumulator-space image of a unit mass at each net point: row p is
    sum over levels of scale(t) * variates(cell key of p at level t)."""
    out = np.zeros((len(net), sk.ell))
    for i, p in enumerate(net):
        point = tuple(p)
        for t, key in emb.point_keys(point):
            out[i] += float(emb.scale(t)) * sk._variates_float(key)
    return out


def _window_means_rows(Z: np.ndarray, ell: int) -> np.ndarray:
    from .sketches import _WINDOW_NORM, VARIATE_BITS
    mags = np.sort(np.abs(Z), axis=1)
    lo = ell // 4
    hi = ell - lo
    if hi <= lo:
        return np.median(mags, axis=1) / (1 << VARIATE_BITS)
    return mags[:, lo:hi].mean(axis=1) / _WINDOW_NORM / (1 << VARIATE_BITS)


def _score_all_candidates(net, subsets, profiles, embeddings, sketches,
                          snapshots, chunk: int = 8192):
    """Sketch-estimated cost of every (subset, best profile) pair, batched."""
    n_sub = len(subsets)
    best = np.full(n_sub, math.inf)
    best_profile = np.zeros(n_sub, dtype=np.intp)
    Ws = [_point_profiles(net, emb, sk)
          for emb, sk in zip(embeddings, sketches)]
    for start in range(0, n_sub, chunk):
        idx = subsets[start:start + chunk]
        for j, profile in enumerate(profiles):
            masses = [float(m) for m in profile]
            per_shift = []
            for W, sk, snap in zip(Ws, sketches, snapshots):
                Z = np.tile(snap, (len(idx), 1))
                for col in range(idx.shape[1]):
                    Z -= masses[col] * W[idx[:, col]]
                per_shift.append(_window_means_rows(Z, sk.ell))
            score = np.median(np.stack(per_shift), axis=0)
            view_best = best[start:start + chunk]
            view_prof = best_profile[start:start + chunk]
            sel = score < view_best
            view_best[sel] = score[sel]
            view_prof[sel] = j
    return best, best_profile


def _refine_on_closed_set(summary, snapshots, bmap) -> float | None:
    """Redistribute candidate mass over the cloned center set, greedily
    accepting sketch-score improvements."""
    support = bmap.flat_set
    if len(support) <= summary.S.size:
        return None
    total = Fraction(summary.total_mass)
    share = total / len(support)
    masses = [share] * len(support)
    masses[0] += total - share * len(support)
    best = _score_profile(summary, support, masses, snapshots)
    quantum = total / 8
    improved = True
    rounds = 0
    while improved and rounds < 4:
        improved = False
        rounds += 1
        for i in range(len(support)):
            for j in range(len(support)):
                if i == j or masses[i] < quantum:
                    continue
                masses[i] -= quantum
                masses[j] += quantum
                score = _score_profile(summary, support, masses, snapshots)
                if score < best - 1e-12:
                    best = score
                    improved = True
                else:
                    masses[i] += quantum
                    masses[j] -= quantum
    return best


def _score_profile(summary, support, masses, snapshots) -> float:
    nu = MassVector([(p, m) for p, m in zip(support, masses) if m != 0])
    per_shift = []
    for emb, sk, snap in zip(summary.embeddings, summary.sketches, snapshots):
        vec = {emb.cell_key(t, cell): mass
               for (t, cell), mass in emb.embed(nu).items()}
        per_shift.append(sk.estimate_against_float(snap, vec))
    return float(np.median(per_shift))


def pass_two(stream, summary: PassOneSummary, params: ClusterParams,
             mode: str | None = None, config: PipelineConfig | None = None,
             meter: MemoryMeter | None = None) -> Coreset:
    """Replay the stream, universe-sample by sensitivity, track the sampled
    slice in sparse recovery, and decode the surviving weighted points."""
    config = config or summary.config
    mode = mode or summary.mode
    if summary.empty:
        return Coreset([], params.eps, params, "two-pass")
    if meter is not None:
        meter.set_phase("pass2")

    cap = config.sparse_budget or max(64, min(summary.total_mass, 4096))
    sk = SparseRecoverySketch(cap, derive_seed(params.seed, "recovery"),
                              rows=config.sparse_rows)
    if meter is not None:
        meter.set("recovery", sk.rows * sk.width * 3)
        meter.set("hash", config.twise_t)

    kz = mode == KZ
    exp_limit = exponent_limit(params) if kz else 0
    ncenters = summary.Cprime.size if kz else 0
    if kz and ncenters == 0:
        raise UsageError("pass two in kz mode needs the bicriteria centers")

    for upd in stream:
        point, delta = (upd.point, upd.delta) if isinstance(upd, DynamicUpdate) \
            else (tuple(upd[0]), int(upd[1]))
        pid = point_to_id(point, params)
        p = summary.sample_probability(point)
        if not twise_sample(summary.hash, pid, p):
            continue
        if kz:
            code = offset_encode(point, summary.Cprime, params)
            key = code.pack(ncenters, exp_limit)
        else:
            key = pid
        sk.update(key, delta)

    decoded = sk.decode()
    items = []
    for key, mult in sorted(decoded.items()):
        if mult <= 0:
            continue
        if kz:
            code = OffsetCode.unpack(key, params.d, ncenters, exp_limit)
            point = offset_decode(code, summary.Cprime, params)
        else:
            point = id_to_point(key, params)
        p = summary.sample_probability(point)
        items.append(WeightedPoint(point, Fraction(mult) / Fraction(p)))
    return Coreset(items, params.eps, params, "two-pass")


def bicriteria_to_k(Cbig: CenterSet, weights, params: ClusterParams,
                    config: PipelineConfig | None = None,
                    seed: int | None = None) -> CenterSet:
    """Recluster the weighted bicriteria centers down to exactly k."""
    if Cbig.size == 0:
        return Cbig
    ws = [Fraction(w) if w else Fraction(1, 10**9) for w in weights]
    data = Dataset([WeightedPoint(tuple(c), w)
                    for c, w in zip(Cbig, ws) if w > 0],
                   params, validate=False)
    centers, _, _ = solve_approx(data, params, params.k,
                                 seed=params.seed if seed is None else seed,
                                 config=config)
    return centers
