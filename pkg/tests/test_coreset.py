import math
from fractions import Fraction

import numpy as np
import pytest

from kzstream import ClusterParams, CenterSet, Dataset, WeightedPoint, cost
from kzstream.coreset import (
    Coreset,
    MergeReduceTree,
    build_coreset_offline,
    clustering_charge_sensitivities,
    coreset_from_bytes,
    coreset_from_text,
    coreset_to_bytes,
    coreset_to_text,
    merge_coresets,
    verify_coreset,
)
from kzstream.errors import UsageError
from kzstream.params import PipelineConfig

from conftest import make_params, two_cluster_instance, uniform_lattice


class TestBuildOffline:
    def test_saturated_probabilities_keep_everything(self):
        params = make_params()
        X = Dataset.from_coords([(1, 1), (5, 9), (16, 2)], params)
        S = build_coreset_offline(X, params, [1.0, 1.0, 1.0])
        assert [wp.point for wp in S.items] == [wp.point for wp in X.points]
        assert all(wp.weight == 1 for wp in S.items)

    def test_rejects_nonpositive_sensitivity(self):
        params = make_params()
        X = Dataset.from_coords([(1, 1), (5, 9)], params)
        with pytest.raises(UsageError):
            build_coreset_offline(X, params, [0.5, 0.0])

    def test_repeated_point_cost_concentration(self):
        # closed form: cost of n copies at any C is n * dist^z(point, C)
        n = 200
        params = ClusterParams(k=1, z=1, eps=0.2, d=1, delta=16, seed=1)
        X = Dataset.from_coords([(7,)] * n, params)
        C = CenterSet([(2.0,)])
        truth = cost(X, C).total
        assert truth == pytest.approx(n * 5.0)
        ok = 0
        for seed in range(200):
            S = build_coreset_offline(X, params, [1.0 / n] * n, seed=seed)
            est = cost(S.as_dataset(), C).total
            if abs(est - truth) < 0.2 * truth:
                ok += 1
        assert ok >= 190

    def test_sample_size_concentrates_near_expectation(self):
        n = 300
        params = ClusterParams(k=1, z=1, eps=0.2, d=1, delta=16, seed=4)
        X = Dataset.from_coords([(int(i % 16) + 1,) for i in range(n)], params)
        q = [1.0 / n] * n
        cfg = PipelineConfig()
        factor = cfg.sample_factor(params)
        p = cfg.quantize_prob(min(1.0, factor / n))
        expect = n * p
        sd = math.sqrt(n * p * (1 - p))
        sizes = [len(build_coreset_offline(X, params, q, seed=s, config=cfg))
                 for s in range(100)]
        assert abs(np.mean(sizes) - expect) <= 3 * sd / math.sqrt(100) + 1e-9

    def test_two_cluster_instances_pass_verifier(self):
        params = ClusterParams(k=2, z=2, eps=0.2, d=2, delta=8, seed=0)
        ok = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            X = two_cluster_instance(rng, 100, params)
            q = clustering_charge_sensitivities(X, params, seed=seed)
            S = build_coreset_offline(X, params, q, seed=seed)
            passed, _, _ = verify_coreset(S, X, 1.0)
            ok += passed
        assert ok >= 190


class TestVerifier:
    def test_identity_coreset_passes_with_unit_ratio(self):
        params = make_params(delta=8)
        rng = np.random.default_rng(0)
        X = uniform_lattice(rng, 20, params)
        S = Coreset(list(X.points), 0.0, params)
        passed, worst, _ = verify_coreset(S, X, 1.0)
        assert passed and worst == pytest.approx(1.0)

    def test_doubled_weights_fail_with_ratio_two(self):
        params = make_params(delta=8)
        rng = np.random.default_rng(1)
        X = uniform_lattice(rng, 20, params)
        doubled = [WeightedPoint(wp.point, wp.weight * 2) for wp in X.points]
        S = Coreset(doubled, 0.25, params)
        passed, worst, witness = verify_coreset(S, X, 1.0)
        assert not passed
        assert worst == pytest.approx(2.0)
        assert witness is not None

    def test_empty_cases(self):
        params = make_params()
        X = Dataset([], params)
        S = Coreset([], 0.2, params)
        assert verify_coreset(S, X, 1.0)[0]
        Y = Dataset.from_coords([(3, 3)], params)
        assert not verify_coreset(S, Y, 1.0)[0]


class TestMergeReduce:
    def cfg(self, block, expected=10_000, **kw):
        return PipelineConfig(block_size=block, expected_stream_len=expected, **kw)

    def test_short_stream_query_is_exact(self):
        params = make_params()
        tree = MergeReduceTree(params, self.cfg(50))
        pts = [(i + 1, 2 * i % 16 + 1) for i in range(20)]
        for p in pts:
            tree.insert(WeightedPoint(p))
        out = tree.query()
        assert [wp.point for wp in out.items] == pts
        assert out.eps_contract == 0.0

    def test_four_blocks_leave_single_level_two_buffer(self):
        params = make_params()
        tree = MergeReduceTree(params, self.cfg(5))
        for i in range(20):
            tree.insert(WeightedPoint((i % 16 + 1, 3)))
        assert tree.partial == []
        live = [lvl for lvl, b in enumerate(tree.buffers) if b is not None]
        assert live == [2]

    def test_three_blocks_leave_levels_one_and_zero(self):
        params = make_params()
        tree = MergeReduceTree(params, self.cfg(5))
        for i in range(15):
            tree.insert(WeightedPoint((i % 16 + 1, 3)))
        live = [lvl for lvl, b in enumerate(tree.buffers) if b is not None]
        assert live == [0, 1]
        out = tree.query()
        assert len(out) <= 2 * max(tree.reduce_target, tree.block_size)

    def test_space_law_live_buffers(self):
        params = make_params()
        tree = MergeReduceTree(params, self.cfg(4))
        for i in range(257):
            tree.insert(WeightedPoint((i % 16 + 1, (i // 16) % 16 + 1)))
            blocks = max(1, tree.n_inserted // tree.block_size)
            assert tree.live_buffer_count() <= math.log2(blocks) + 1 + 1e-9

    def test_stream_cost_agreement_at_random_centers(self):
        params = ClusterParams(k=2, z=1, eps=0.3, d=2, delta=16, seed=5)
        cfg = PipelineConfig(expected_stream_len=10_000)
        tree = MergeReduceTree(params, cfg)
        rng = np.random.default_rng(11)
        pts = [tuple(map(int, rng.integers(1, 17, 2))) for _ in range(10_000)]
        for p in pts:
            tree.insert(WeightedPoint(p))
        out = tree.query()
        X = Dataset.from_coords(pts, params)
        S = out.as_dataset()
        for trial in range(50):
            crng = np.random.default_rng(trial)
            C = CenterSet([tuple(crng.uniform(1, 17, 2)) for _ in range(2)])
            truth = cost(X, C).total
            est = cost(S, C).total
            assert abs(est - truth) <= 0.3 * truth

    def test_merge_closure_and_reduce_composition(self):
        params = make_params(delta=8)
        rng = np.random.default_rng(3)
        A = uniform_lattice(rng, 12, params)
        B = uniform_lattice(rng, 12, params)
        Sa = Coreset(list(A.points), 0.05, params)
        Sb = Coreset(list(B.points), 0.10, params)
        merged = merge_coresets(Sa, Sb)
        assert merged.eps_contract == pytest.approx(0.10)
        union = Dataset(list(A.points) + list(B.points), params)
        assert verify_coreset(merged, union, 1.0)[0]
        # composing contracts multiplies the factors
        eps = (1 + 0.05) * (1 + 0.10) - 1
        assert eps == pytest.approx(0.155)


class TestSerialization:
    def roundtrip_params(self):
        return make_params()

    def test_text_round_trip(self, tmp_path):
        params = make_params()
        S = Coreset([WeightedPoint((3, 4), Fraction(5, 2)),
                     WeightedPoint((1, 16), Fraction(1))], 0.25, params)
        text = coreset_to_text(S)
        back = coreset_from_text(text, params)
        assert [wp.point for wp in back.items] == [(3, 4), (1, 16)]
        assert [wp.weight for wp in back.items] == [Fraction(5, 2), Fraction(1)]
        # write(parse(file)) is idempotent on canonical files
        assert coreset_to_text(back) == text

    def test_binary_round_trip(self):
        params = make_params()
        S = Coreset([WeightedPoint((3, 4), Fraction(7, 3)),
                     WeightedPoint((2.5, 4.0), Fraction(1))], 0.2, params)
        back = coreset_from_bytes(coreset_to_bytes(S), params)
        assert [wp.weight for wp in back.items] == [Fraction(7, 3), Fraction(1)]
        assert back.items[1].point == (2.5, 4.0)

    def test_header_mismatch_raises(self):
        params = make_params()
        other = make_params(k=3)
        S = Coreset([WeightedPoint((3, 4))], 0.25, params)
        with pytest.raises(Exception):
            coreset_from_text(coreset_to_text(S), other)
