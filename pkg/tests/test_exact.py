import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multirank.errors import (BudgetExceededError, DegenerateSpectrumError, InvalidArgumentError,
                              PrecisionWarning)
from multirank.exact import (LaplaceParams, check_snake, curve_ranks, exact_null_distribution,
                             laplace_transform, permutation_pvalue, permutation_pvalue_labels,
                             random_subsets, snake_curve, spacing_moments, spacing_nodes,
                             spacing_stat, subsets, transform_moments)
from multirank.rank_map import RankAssignment, SampleSet, assign_ranks, build_grid
from multirank.weights import WeightFn, builtin, center_on_grid

# Classical Wilcoxon rank-sum null counts for m = n = 5, rank sums 15..40.
WILCOXON_5_5 = [1, 1, 2, 3, 5, 7, 9, 11, 14, 16, 18, 19, 20, 20, 19, 18, 16, 14, 11, 9, 7, 5, 3, 2, 1, 1]


def rank_sum_counts(N, n):
    """Counts of the sum of an n-subset of 1..N, by dynamic programming over elements."""
    top = n * N
    table = [[0] * (top + 1) for _ in range(n + 1)]
    table[0][0] = 1
    for r in range(1, N + 1):
        for j in range(min(n, r), 0, -1):
            for s in range(top, r - 1, -1):
                table[j][s] += table[j - 1][s - r]
    return {s: c for s, c in enumerate(table[n]) if c}


def brute_force_spacing(positions, N, nodes):
    """Spacing statistic written out term by term."""
    n = len(positions)
    r = [0] + list(positions) + [N + 1]
    return [sum(nodes[j][c] * (r[j + 1] - r[j]) for j in range(n + 1)) / n for c in range(len(nodes[0]))]


def brute_force_mgf(k, n, nodes, s):
    N = k + n
    total = 0.0
    for sub in itertools.combinations(range(1, N + 1), n):
        S = brute_force_spacing(sub, N, nodes)
        total += math.exp(sum(a * b for a, b in zip(s, S)))
    return total / math.comb(N, n)


def identity_weight(p=1):
    return builtin("mann_whitney", p)


class TestSnakeCurve:
    def test_two_by_two(self):
        c = snake_curve(2, 2)
        assert [tuple(x) for x in c.order] == [(0, 0), (0, 1), (1, 1), (1, 0)]

    def test_one_dimensional_identity(self):
        np.testing.assert_array_equal(snake_curve(1, 7).order[:, 0], np.arange(7))

    def test_three_by_three_by_three(self):
        c = snake_curve(3, 3)
        assert c.order.shape == (27, 3)
        steps = np.abs(np.diff(c.order, axis=0)).sum(axis=1)
        assert np.all(steps == 1) and steps.size == 26

    @pytest.mark.parametrize("p, a", [(p, a) for p in range(1, 13) for a in range(1, 65) if a ** p <= 4096])
    def test_invariants(self, p, a):
        c = snake_curve(p, a)
        cells = c.order
        assert len({tuple(x) for x in cells}) == a ** p
        assert cells.min() >= 0 and cells.max() <= a - 1
        if a ** p > 1:
            d = np.abs(np.diff(cells, axis=0))
            assert np.all(d.sum(axis=1) == 1) and np.all(d.max(axis=1) == 1)
        assert check_snake(cells, a)

    def test_checker_rejects_jump(self):
        bad = np.array([[0, 0], [1, 1], [0, 1], [1, 0]])
        assert not check_snake(bad, 2)

    def test_curve_endpoints(self):
        c = snake_curve(2, 3)
        np.testing.assert_allclose(c([1.0])[0], c.cell_centers[-1])
        np.testing.assert_allclose(c([0.0])[0], c.cell_centers[0])

    def test_curve_ranks_match_grid(self):
        g = build_grid(9, 2)
        ranks = curve_ranks(g, snake_curve(2, 3))
        assert sorted(ranks.tolist()) == list(range(1, 10))
        # first slab traversed forward, second reversed
        np.testing.assert_array_equal(ranks[:6], [1, 2, 3, 6, 5, 4])

    def test_curve_ranks_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            curve_ranks(build_grid(9, 2), snake_curve(2, 4))


class TestSpacingStat:
    def test_hand_example(self):
        g = build_grid(4, 1)
        a = RankAssignment(np.arange(4), g)
        res = spacing_stat(a, identity_weight(), None, [1, 0, 1, 0])
        assert res.S[0] == pytest.approx(1.5, abs=1e-15)
        np.testing.assert_array_equal(res.positions, [1, 3])
        np.testing.assert_allclose(res.rho, [0.25, 0.75])

    def test_constant_weight_telescopes(self):
        c = 2.5
        w = WeightFn(1, 1, lambda u: np.full((u.shape[0], 1), c), "c")
        g = build_grid(9, 1)
        for labels in ([1, 0, 0, 1, 1, 0, 1, 0, 0], [0] * 5 + [1] * 4):
            S = spacing_stat(RankAssignment(np.arange(9), g), w, None, labels).S[0]
            assert S == pytest.approx(c * 10 / 4)

    def test_extremes_of_exact_distribution(self):
        N, n = 8, 3
        V = spacing_nodes(identity_weight(), n)
        vals = [brute_force_spacing(sub, N, V)[0] for sub in itertools.combinations(range(1, N + 1), n)]
        g = build_grid(N, 1)
        first = spacing_stat(RankAssignment(np.arange(N), g), identity_weight(), None, [1] * n + [0] * (N - n))
        last = spacing_stat(RankAssignment(np.arange(N), g), identity_weight(), None, [0] * (N - n) + [1] * n)
        assert sorted([first.S[0], last.S[0]]) == pytest.approx([min(vals), max(vals)])

    def test_multivariate_uses_curve(self):
        rng = np.random.default_rng(0)
        s = SampleSet(rng.normal(size=(16, 2)), rng.permutation(np.repeat([0, 1], 8)))
        g = build_grid(16, 2)
        a = assign_ranks(s, g)
        curve = snake_curve(2, g.levels)
        res = spacing_stat(a, identity_weight(2), curve, s.groups)
        assert np.all(np.diff(res.positions) > 0)
        assert np.all((res.rho > 0) & (res.rho <= 1))
        expected = brute_force_spacing(res.positions.tolist(), 16, spacing_nodes(identity_weight(2), 8, curve))
        np.testing.assert_allclose(res.S, expected, rtol=1e-14)

    def test_multivariate_needs_curve(self):
        g = build_grid(16, 2)
        with pytest.raises(InvalidArgumentError):
            spacing_stat(RankAssignment(np.arange(16), g), identity_weight(2), None, [0, 1] * 8)

    def test_infinite_endpoint_moves_inward(self):
        V = spacing_nodes(builtin("van_der_waerden", 1), 4)
        assert np.all(np.isfinite(V)) and V[2, 0] == 0.0 and V[0, 0] == -V[4, 0]


class TestLaplaceTransform:
    def test_zero(self):
        params = LaplaceParams.from_weight(identity_weight(), 5, 4)
        assert laplace_transform(params, [0.0]) == 1.0

    @pytest.mark.parametrize("k, n, s", [(4, 3, 0.5), (3, 2, -1.0), (6, 5, 2.0), (1, 1, 0.3), (0, 3, 1.0)])
    def test_small_cases(self, k, n, s):
        params = LaplaceParams.from_weight(identity_weight(), k, n)
        expected = brute_force_mgf(k, n, params.W.tolist(), [s])
        assert laplace_transform(params, [s]) == pytest.approx(expected, rel=1e-8)

    def test_t_scalarizes_s(self):
        params = LaplaceParams.from_weight(identity_weight(), 4, 3)
        assert laplace_transform(params, [0.5], t=2.0) == pytest.approx(laplace_transform(params, [1.0]),
                                                                       rel=1e-14)

    def test_bivariate_weight(self):
        W = [[0.1, -0.3], [0.7, 0.2], [-0.4, 0.9], [0.3, 0.35]]
        params = LaplaceParams(k=4, n=3, W=W)
        s = [0.8, -1.3]
        assert laplace_transform(params, s) == pytest.approx(brute_force_mgf(4, 3, W, s), rel=1e-10)

    def test_coincident_exponents(self):
        params = LaplaceParams.from_weight(builtin("mood", 1), 4, 4)
        with pytest.raises(DegenerateSpectrumError):
            laplace_transform(params, [1.0])

    def test_precision_warning(self):
        params = LaplaceParams.from_weight(identity_weight(), 3, 16)
        with pytest.warns(PrecisionWarning):
            laplace_transform(params, [0.1])

    def test_wrong_rows(self):
        with pytest.raises(InvalidArgumentError):
            LaplaceParams(k=3, n=2, W=[[0.0], [1.0]])

    def test_large_separation_keeps_accuracy(self):
        params = LaplaceParams.from_weight(identity_weight(), 6, 6)
        expected = brute_force_mgf(6, 6, params.W.tolist(), [1e-4])
        assert laplace_transform(params, [1e-4]) == pytest.approx(expected, rel=1e-10)


class TestMoments:
    @pytest.mark.parametrize("k, n", [(3, 2), (5, 4), (7, 6)])
    def test_closed_form_matches_enumeration(self, k, n):
        W = np.array([[0.2 + 0.1 * j, (j - n / 2) ** 2] for j in range(n + 1)])
        N = k + n
        Ss = np.array([brute_force_spacing(sub, N, W.tolist()) for sub in itertools.combinations(range(1, N + 1), n)])
        mean, cov = spacing_moments(LaplaceParams(k=k, n=n, W=W))
        np.testing.assert_allclose(mean, Ss.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(cov, np.cov(Ss.T, bias=True), rtol=1e-10, atol=1e-14)

    def test_transform_route_agrees(self):
        params = LaplaceParams.from_weight(identity_weight(), 6, 5)
        g, H = transform_moments(params)
        mean, cov = spacing_moments(params)
        np.testing.assert_allclose(g, mean, rtol=1e-5)
        np.testing.assert_allclose(H, cov, rtol=1e-4)


class TestExactNullDistribution:
    def test_four_point_mann_whitney(self):
        cw = center_on_grid(identity_weight(), build_grid(4, 1))
        dist = exact_null_distribution(lambda b: cw.values[b, 0].sum(axis=1) / 2, 4, 2)
        np.testing.assert_allclose(dist.values, [-0.25, -0.125, 0, 0, 0.125, 0.25], atol=1e-15)
        zero = int(np.flatnonzero(np.isclose(dist.support, 0.0))[0])
        assert dist.probabilities()[zero] == Fraction(1, 3)

    def test_wilcoxon_table(self):
        dist = exact_null_distribution(lambda b: (b + 1).sum(axis=1), 10, 5)
        assert dist.total == 252 and dist.values.size == 252
        np.testing.assert_array_equal(dist.support, np.arange(15, 41))
        assert dist.counts.tolist() == WILCOXON_5_5
        assert dist.probabilities()[0] == Fraction(1, 252)

    @pytest.mark.parametrize("N, n", [(7, 3), (9, 4), (12, 5)])
    def test_rank_sum_dynamic_programming(self, N, n):
        dist = exact_null_distribution(lambda b: (b + 1).sum(axis=1), N, n)
        assert dict(zip(dist.support.astype(int).tolist(), dist.counts.tolist())) == rank_sum_counts(N, n)

    def test_constant_statistic(self):
        dist = exact_null_distribution(lambda b: np.full(len(b), 3.0), 8, 3)
        assert dist.pvalue(3.0) == 1.0 and dist.counts.tolist() == [56]

    def test_pvalue_counts_ties(self):
        dist = exact_null_distribution(lambda b: (b + 1).sum(axis=1), 10, 5)
        assert dist.pvalue(40) == pytest.approx(1 / 252)
        assert dist.pvalue(39) == pytest.approx(2 / 252)
        assert dist.pvalue(15) == 1.0

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            exact_null_distribution(lambda b: b.sum(axis=1), 30, 15)

    def test_subsets_chunks(self):
        blocks = list(subsets(7, 3, chunk=10))
        allrows = np.vstack(blocks)
        assert allrows.shape == (35, 3) and [len(b) for b in blocks] == [10, 10, 10, 5]
        assert [tuple(r) for r in allrows] == list(itertools.combinations(range(7), 3))

    def test_csv(self, tmp_path):
        dist = exact_null_distribution(lambda b: (b + 1).sum(axis=1), 6, 2)
        out = tmp_path / "d.csv"
        dist.to_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "value,count" and len(lines) == 1 + dist.support.size


class TestPermutation:
    def stat(self, b):
        return (b + 1).sum(axis=1).astype(float)

    def test_lower_bound(self):
        assert permutation_pvalue(self.stat, 1e9, 10, 5, B=99, seed=1) == pytest.approx(1 / 100)

    def test_reproducible(self):
        a = permutation_pvalue(self.stat, 34, 10, 5, B=5000, seed=7)
        assert a == permutation_pvalue(self.stat, 34, 10, 5, B=5000, seed=7)

    def test_matches_enumeration(self):
        exact = exact_null_distribution(self.stat, 10, 5).pvalue(34)
        B = 100_000
        mc = permutation_pvalue(self.stat, 34, 10, 5, B=B, seed=3)
        assert abs(mc - exact) <= 3 * math.sqrt(exact * (1 - exact) / B)

    def test_random_subsets_uniform(self):
        rng = np.random.default_rng(0)
        draws = random_subsets(rng, 5, 2, 20000)
        keys, counts = np.unique(draws, axis=0, return_counts=True)
        assert len(keys) == 10
        chi2 = ((counts - 2000) ** 2 / 2000).sum()
        assert chi2 < 27.9  # 0.999 quantile of chi-square with 9 df

    def test_labels_version_matches(self):
        labels = np.repeat([0, 1], 5)

        def stat(perm):
            return np.where(perm == 1, np.arange(1, 11), 0).sum(axis=1).astype(float)

        exact = exact_null_distribution(self.stat, 10, 5).pvalue(34)
        mc = permutation_pvalue_labels(stat, 34, labels, B=50_000, seed=2)
        assert abs(mc - exact) <= 4 * math.sqrt(exact * (1 - exact) / 50_000)

    def test_bad_B(self):
        with pytest.raises(InvalidArgumentError):
            permutation_pvalue(self.stat, 0, 10, 5, B=0)
