"""Online sensitivities for (k,z)-clustering.

Three layers: a desk-scale exact oracle that maximizes the cost ratio over
every k-subset of a candidate net, an implementable upper-bound estimator
that charges a new point against the maintained approximate clustering
(distance share of the running cost plus an inverse-cluster-size term), and
the sequential sampling process that turns the estimates into a weighted
sample stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

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
from .errors import UsageError
from .params import ClusterParams, PipelineConfig
from .rng import derive_seed, u01


@dataclass(frozen=True)
class OnlineSensEstimate:
    """Upper-bound estimate of one point's online sensitivity.

    components = (charge_to_cost, charge_to_cluster_size): the distance share
    of the running cost and the inverse-cluster-size charge, before clamping.
    """

    sigma_hat: float
    p: float
    components: tuple[float, float]


def online_sensitivities_exact(X: Dataset, candidate_grid_step: float,
                               budget: int = COMBINATION_BUDGET) -> np.ndarray:
    """Exact online sensitivity of every prefix point, by net enumeration.

    Entry t is max over k-subsets C of the net of
    weight_t * dist^z(x_t, C) / cost(X_t, C); the first entry is always 1.
    """
    params = X.params
    n = len(X)
    if n == 0:
        return np.zeros(0)
    cands = candidate_net(params, candidate_grid_step, data=X)
    enumeration_budget_guard(len(cands), params.k, budget)
    D = _pairwise_dist_z(cands, X.array, params.z)
    w = X.weight_array
    sigma = np.zeros(n)
    m = D.shape[0]
    import itertools
    combos = itertools.combinations(range(m), params.k)
    while True:
        batch = list(itertools.islice(combos, 2048))
        if not batch:
            break
        idx = np.asarray(batch, dtype=np.intp)
        sub = D[idx[:, 0]]
        for col in range(1, params.k):
            sub = np.minimum(sub, D[idx[:, col]])
        contrib = sub * w[None, :]
        den = np.cumsum(contrib, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios = np.where(den > 0, contrib / den, 0.0)
        sigma = np.maximum(sigma, ratios.max(axis=0))
    return sigma


def online_sensitivity_exact(prefix: Dataset, x_t=None,
                             candidate_grid_step: float = 1.0,
                             budget: int = COMBINATION_BUDGET) -> float:
    """Exact online sensitivity of the last prefix point (net oracle)."""
    if len(prefix) == 0:
        raise UsageError("online sensitivity of an empty prefix is undefined")
    if x_t is not None and tuple(x_t) != tuple(prefix.points[-1].point):
        raise UsageError("x_t must be the last point of the prefix")
    return float(online_sensitivities_exact(prefix, candidate_grid_step,
                                            budget)[-1])


class OnlineSampler:
    """Sequential sampler state: approximate solution, per-cluster weights,
    running cost, and the Bernoulli sampling loop.

    Strictly single-writer; all draws are pure functions of (seed, index) so
    replays are reproducible.  The substrate callable supplies the weighted
    set used to refresh the approximate solution (the maintained coreset);
    without one, the sampler reclusters its own sample buffer.
    """

    def __init__(self, params: ClusterParams, config: PipelineConfig | None = None,
                 gamma: float | None = None, expected_len: int | None = None,
                 substrate=None, seed_tag="online-sample"):
        self.params = params
        self.config = config or PipelineConfig()
        self.gamma = gamma if gamma is not None else self.config.gamma(
            params, expected_len)
        self.alpha = self.config.alpha
        self.substrate = substrate
        self.approx_solution: CenterSet | None = None
        self._centers = None
        self.cluster_weights: np.ndarray | None = None
        self.running_cost = 0.0
        self._comp = 0.0
        self.count_sampled = 0
        self.t = 0
        self._next_refresh = 1
        self._buffer: list[WeightedPoint] = []
        self.seed = derive_seed(params.seed, seed_tag)

    # -- state updates -----------------------------------------------------

    def _add_cost(self, v: float) -> None:
        y = v - self._comp
        t = self.running_cost + y
        self._comp = (t - self.running_cost) - y
        self.running_cost = t

    def _nearest(self, point):
        diff = self._centers - np.asarray(point, dtype=float)
        sq = np.einsum("md,md->m", diff, diff)
        j = int(np.argmin(sq))
        dz = float(sq[j]) if self.params.z == 2 else math.sqrt(sq[j]) ** self.params.z
        return j, dz

    def estimate(self, point) -> OnlineSensEstimate:
        """Sensitivity upper bound for the next point, given current state."""
        if self.t == 0 or self._centers is None:
            return OnlineSensEstimate(1.0, 1.0, (0.0, 1.0))
        z = self.params.z
        j, dz = self._nearest(point)
        denom = self.running_cost + dz
        charge_cost = self.alpha * 2**z * dz / denom if denom > 0 else 0.0
        charge_cluster = 3.0 * 2 ** (2 * z - 1) / (self.cluster_weights[j] + 1.0)
        sigma = min(1.0, charge_cost + charge_cluster)
        p = self.config.quantize_prob(min(1.0, 2.0 * self.gamma * sigma))
        return OnlineSensEstimate(sigma, p, (charge_cost, charge_cluster))

    def process(self, point):
        """Estimate, draw, and fold the point into the state.

        Returns (sampled, weight-or-None, estimate).  The weight is the exact
        rational 1/p of a sampled point.
        """
        point = tuple(point)
        est = self.estimate(point)
        sampled = u01(self.seed, "bern", self.t) < est.p
        weight = Fraction(1) / Fraction(est.p) if sampled else None

        if self._centers is None:
            self.approx_solution = CenterSet([point])
            self._centers = self.approx_solution.array
            self.cluster_weights = np.zeros(1)
            j, dz = 0, 0.0
        else:
            j, dz = self._nearest(point)
        self._add_cost(dz)
        self.cluster_weights[j] += 1.0
        self.t += 1
        if sampled:
            self.count_sampled += 1
            if self.substrate is None:
                self._buffer.append(WeightedPoint(point, weight))
        if self.t >= self._next_refresh:
            self._refresh()
        return sampled, weight, est

    def _refresh(self) -> None:
        data = (self.substrate() if self.substrate is not None
                else Dataset(self._buffer, self.params, validate=False))
        self._next_refresh = max(
            int(self.t * self.config.refresh_factor), self.t + 1)
        if len(data) == 0:
            return
        sol, total, assign = solve_approx(
            data, self.params, self.params.k,
            seed=derive_seed(self.seed, "refresh", self.t), config=self.config)
        if sol.size == 0:
            return
        self.approx_solution = sol
        self._centers = sol.array
        self.cluster_weights = np.bincount(
            assign, weights=data.weight_array, minlength=sol.size).astype(float)
        self.running_cost = total
        self._comp = 0.0


def online_sensitivity_estimate(state: OnlineSampler, x_t,
                                params: ClusterParams | None = None
                                ) -> OnlineSensEstimate:
    """Functional view of :meth:`OnlineSampler.estimate`."""
    return state.estimate(x_t)


def online_sample(stream, params: ClusterParams, gamma: float | None = None,
                  mode: str = "estimate", config: PipelineConfig | None = None,
                  candidate_grid_step: float = 1.0):
    """Bernoulli-sample an insertion-only stream by online sensitivity.

    Returns the list of (WeightedPoint, p_t) emissions: the implicit weighted
    sample stream.  mode "oracle" uses the exact net oracle for sigma_t
    (p = min(1, gamma * sigma)); mode "estimate" uses the upper-bound
    estimator (p = min(1, 2 * gamma * sigma_hat)).
    """
    config = config or PipelineConfig()
    stream = [tuple(p) for p in stream]
    out = []
    if mode == "oracle":
        X = Dataset.from_coords(stream, params, validate=False)
        sigmas = online_sensitivities_exact(X, candidate_grid_step)
        if gamma is None:
            gamma = config.gamma(params, len(stream))
        seed = derive_seed(params.seed, "online-sample")
        for t, (pt, s) in enumerate(zip(stream, sigmas)):
            p = config.quantize_prob(min(1.0, gamma * float(s)))
            if u01(seed, "bern", t) < p:
                out.append((WeightedPoint(pt, Fraction(1) / Fraction(p)), p))
        return out
    if mode != "estimate":
        raise UsageError(f"unknown sampling mode {mode!r}")
    sampler = OnlineSampler(params, config=config, gamma=gamma,
                            expected_len=len(stream))
    for pt in stream:
        sampled, weight, est = sampler.process(pt)
        if sampled:
            out.append((WeightedPoint(pt, weight), est.p))
    return out
