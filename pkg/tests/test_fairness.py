import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairquant.fairness import (
    CutoffSchedule,
    ae_over_queries,
    kl_divergence,
    rae,
    rkl,
    rnd,
    wilcoxon_signed_rank,
    wilcoxon_statistic,
)

simplex_2 = st.floats(min_value=0.0, max_value=1.0).map(lambda p: np.array([p, 1.0 - p]))


def random_simplex(rng, n):
    v = rng.random(n) + 1e-12
    return v / v.sum()


class TestKlDivergence:
    def test_identity_is_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_boundary(self):
        # (1,0) vs uniform: ln 2 up to the smoothing perturbation
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-4)

    def test_asymmetry(self):
        p, q = [0.9, 0.1], [0.5, 0.5]
        # both sides computed independently from the definition
        eps = 1e-6
        ps = (np.array(p) + eps) / (1 + 2 * eps)
        qs = (np.array(q) + eps) / (1 + 2 * eps)
        forward = float(np.sum(ps * np.log(ps / qs)))
        backward = float(np.sum(qs * np.log(qs / ps)))
        assert kl_divergence(p, q) == pytest.approx(forward, rel=1e-12)
        assert kl_divergence(q, p) == pytest.approx(backward, rel=1e-12)
        assert forward != pytest.approx(backward)

    def test_non_negative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n = rng.integers(2, 6)
            p, q = random_simplex(rng, n), random_simplex(rng, n)
            assert kl_divergence(p, q) >= 0.0


class TestCutoffSchedule:
    def test_default(self):
        schedule = CutoffSchedule()
        assert schedule.cutoffs == (50, 100, 500, 1000)
        expected = sum(1 / math.log2(k) for k in (50, 100, 500, 1000))
        assert schedule.normalizer == pytest.approx(expected)

    def test_rejects_k_below_two(self):
        with pytest.raises(ValueError):
            CutoffSchedule((1, 50))


class TestRkl:
    def test_zero_at_target(self):
        target = np.array([0.4, 0.6])
        dists = {k: target for k in (50, 100, 500, 1000)}
        assert rkl(dists, target) == pytest.approx(0.0, abs=1e-12)

    def test_single_cutoff_equals_kl(self):
        schedule = CutoffSchedule((100,))
        p, q = np.array([0.2, 0.8]), np.array([0.5, 0.5])
        assert rkl({100: p}, q, schedule) == pytest.approx(kl_divergence(p, q))

    def test_constant_kl_passes_through(self):
        p, target = np.array([0.2, 0.8]), np.array([0.5, 0.5])
        c = kl_divergence(p, target)
        dists = {k: p for k in (50, 100, 500, 1000)}
        assert rkl(dists, target) == pytest.approx(c)

    def test_missing_cutoff_raises(self):
        with pytest.raises(ValueError, match="missing cutoff"):
            rkl({50: np.array([0.5, 0.5])}, np.array([0.5, 0.5]))

    def test_weight_scaling_invariance(self):
        # scaling every per-k weight cancels in Z: compare against a manual
        # computation with doubled weights
        rng = np.random.default_rng(3)
        dists = {k: random_simplex(rng, 3) for k in (50, 100, 500, 1000)}
        target = random_simplex(rng, 3)
        weights = {k: 2.0 / math.log2(k) for k in dists}
        manual = sum(w * kl_divergence(dists[k], target) for k, w in weights.items())
        manual /= sum(weights.values())
        assert rkl(dists, target) == pytest.approx(manual, rel=1e-12)


class TestRnd:
    def test_zero_at_target(self):
        target = np.array([0.7, 0.3])
        dists = {k: target for k in (50, 100, 500, 1000)}
        assert rnd(dists, target) == pytest.approx(0.0)

    def test_single_cutoff_gap(self):
        schedule = CutoffSchedule((100,))
        assert rnd({100: np.array([0.5, 0.5])}, np.array([0.3, 0.7]),
                   schedule) == pytest.approx(0.2)

    def test_constant_gap(self):
        dists = {k: np.array([0.5, 0.5]) for k in (50, 100, 500, 1000)}
        assert rnd(dists, np.array([0.6, 0.4])) == pytest.approx(0.1)

    def test_binary_only(self):
        dists = {k: np.array([0.2, 0.3, 0.5]) for k in (50, 100, 500, 1000)}
        with pytest.raises(ValueError, match="binary"):
            rnd(dists, np.array([0.2, 0.3, 0.5]))


class TestRae:
    def test_zero_at_exact(self):
        assert rae([0.5, 0.5], [0.5, 0.5], 100) == 0.0

    def test_arithmetic_large_m(self):
        assert rae([0.5, 0.5], [0.25, 0.75], 10**9) == pytest.approx(0.5, abs=1e-6)

    def test_boundary_exact(self):
        assert rae([1.0, 0.0], [1.0, 0.0], 10) == 0.0

    def test_bad_bag_size(self):
        with pytest.raises(ValueError):
            rae([0.5, 0.5], [0.5, 0.5], 0)

    @given(st.integers(0, 5), st.integers(0, 5))
    @settings(max_examples=30)
    def test_permutation_equivariant(self, i, j):
        rng = np.random.default_rng(17)
        p, q = random_simplex(rng, 6), random_simplex(rng, 6)
        perm = list(range(6))
        perm[i], perm[j] = perm[j], perm[i]
        assert rae(p, q, 50) == pytest.approx(rae(p[perm], q[perm], 50), rel=1e-12)


class TestAeOverQueries:
    def test_identical(self):
        assert ae_over_queries({"a": 0.5}, {"a": 0.5}) == 0.0

    def test_arithmetic(self):
        assert ae_over_queries({"a": 0.1, "b": 0.3},
                               {"a": 0.2, "b": 0.2}) == pytest.approx(0.1)

    def test_single_query(self):
        assert ae_over_queries({"a": 0.9}, {"a": 0.6}) == pytest.approx(0.3)

    def test_mismatched_sets(self):
        with pytest.raises(ValueError, match="mismatched"):
            ae_over_queries({"a": 0.1}, {"b": 0.1})


class TestWilcoxon:
    # Reference values computed independently with scipy.stats.wilcoxon
    # (zero_method='wilcox', correction=False, mode='approx') BEFORE this
    # implementation was written; frozen here.
    PAIRS_A = [125.0, 115.0, 130.0, 140.0, 140.0, 115.0, 140.0, 125.0, 140.0, 135.0]
    PAIRS_B = [110.0, 122.0, 125.0, 120.0, 140.0, 124.0, 123.0, 137.0, 135.0, 145.0]
    REF_W = 18.0
    REF_P = 0.5936305914425295

    def test_textbook_ten_pairs(self):
        assert wilcoxon_statistic(self.PAIRS_A, self.PAIRS_B) == pytest.approx(self.REF_W)
        assert wilcoxon_signed_rank(self.PAIRS_A, self.PAIRS_B) == pytest.approx(
            self.REF_P, abs=1e-3)

    def test_matches_scipy_on_random_pairs(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.normal(size=25)
            b = a + rng.normal(scale=0.7, size=25)
            ref = scipy_stats.wilcoxon(a, b, zero_method="wilcox", correction=False,
                                       mode="approx")
            assert wilcoxon_signed_rank(a, b) == pytest.approx(ref.pvalue, abs=1e-9)

    def test_all_zero_differences_error(self):
        a = [1.0] * 10
        with pytest.raises(ValueError, match="sample too small"):
            wilcoxon_signed_rank(a, a)

    def test_constant_shift_minimal_statistic(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=20)
        b = a + 3.0
        assert wilcoxon_statistic(a, b) == 0.0
        assert wilcoxon_signed_rank(a, b) < 0.001

    def test_fewer_than_six_nonzero(self):
        with pytest.raises(ValueError, match="sample too small"):
            wilcoxon_signed_rank([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])

    def test_symmetry_in_arguments(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=15)
        b = rng.normal(size=15)
        assert wilcoxon_signed_rank(a, b) == pytest.approx(
            wilcoxon_signed_rank(b, a), rel=1e-12)

    def test_ties_are_averaged(self):
        # |d| values contain exact ties; scipy agrees only if ranks are averaged
        scipy_stats = pytest.importorskip("scipy.stats")
        a = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
        b = np.array([1.0, 3.0, 1.0, 4.0, 2.0, 6.0, 5.0, 3.0])
        ref = scipy_stats.wilcoxon(a, b, zero_method="wilcox", correction=False,
                                   mode="approx")
        assert wilcoxon_signed_rank(a, b) == pytest.approx(ref.pvalue, abs=1e-9)
