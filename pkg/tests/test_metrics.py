import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from caeunmix.data import FactorPair
from caeunmix.errors import ContractError, ParameterError, ShapeError
from caeunmix.metrics import (
    align_endmembers,
    evaluate,
    normalize_abundance_maps,
    rmse,
    sad,
)

positive_vectors = arrays(np.float64, 6, elements=st.floats(0.01, 100.0))


class TestSad:
    def test_identical(self):
        a = np.array([0.3, 1.2, 5.0, 0.01])
        assert sad(a, a) == 0.0

    def test_orthogonal(self):
        assert sad(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == math.pi / 2

    def test_scale_invariant(self):
        assert sad(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0])) == 0.0

    def test_opposite(self):
        # acos is ill-conditioned at -1: one ulp of cosine is ~2e-8 rad
        assert sad(np.array([1.0, 1.0]), np.array([-1.0, -1.0])) == pytest.approx(math.pi, abs=1e-7)

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            sad(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            sad(np.ones(3), np.ones(4))

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)
        dot = sum(x * y for x, y in zip(a, b))
        expected = math.acos(dot / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b)))
        assert abs(sad(a, b) - expected) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(positive_vectors, positive_vectors, st.floats(0.01, 100.0))
    def test_symmetry_and_scale(self, a, b, c):
        assert sad(a, b) == pytest.approx(sad(b, a), abs=1e-12)
        assert sad(c * a, b) == pytest.approx(sad(a, b), abs=1e-7)
        assert 0.0 <= sad(a, b) <= math.pi


class TestRmse:
    def test_identical(self):
        s = np.array([0.1, 0.5, 0.9])
        assert rmse(s, s) == 0.0

    def test_unit_offset(self):
        assert rmse(np.zeros(4), np.ones(4)) == 1.0

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(1)
        s, t = rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000)
        total = 0.0
        for x, y in zip(s, t):
            total += (y - x) ** 2
        assert abs(rmse(s, t) - math.sqrt(total / 1000)) <= 1e-12

    def test_tiny_difference_does_not_underflow(self):
        t = np.full(8, 6.3546067e-260)
        assert rmse(np.zeros(8), t) == pytest.approx(6.3546067e-260, rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rmse(np.zeros(3), np.zeros(4))

    def test_empty(self):
        with pytest.raises(ShapeError):
            rmse(np.zeros(0), np.zeros(0))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 8, elements=st.floats(-10, 10)), arrays(np.float64, 8, elements=st.floats(-10, 10)))
    def test_metric_properties(self, s, t):
        assert rmse(s, t) >= 0
        assert rmse(s, t) == pytest.approx(rmse(t, s), abs=1e-12)
        assert (rmse(s, t) == 0) == np.array_equal(s, t)


def exhaustive_alignment(A_est, A_gt):
    """Independent oracle: enumerate assignments, keep strict improvements."""
    r = A_est.shape[0]
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(r)):
        cost = 0.0
        for i in range(r):
            a, b = A_gt[perm[i]], A_est[i]
            cost += math.acos(max(-1.0, min(1.0, float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))))
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


class TestAlign:
    def test_identity(self):
        A = np.random.default_rng(2).uniform(0.1, 1, (4, 30))
        assert align_endmembers(A, A) == (0, 1, 2, 3)

    def test_swap(self):
        A = np.random.default_rng(3).uniform(0.1, 1, (3, 30))
        assert align_endmembers(A[[1, 0, 2]], A) == (1, 0, 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_r4_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        A_gt = rng.uniform(0, 1, (4, 20))
        A_est = rng.uniform(0, 1, (4, 20))
        assert align_endmembers(A_est, A_gt) == exhaustive_alignment(A_est, A_gt)

    def test_scaled_and_permuted(self):
        rng = np.random.default_rng(4)
        A = rng.uniform(0.1, 1, (5, 40))
        perm = [3, 0, 4, 1, 2]
        est = A[perm] * rng.uniform(0.5, 20, (5, 1))
        assert align_endmembers(est, A) == tuple(perm)

    def test_tie_takes_lexicographically_smallest(self):
        A = np.ones((3, 5))
        assert align_endmembers(A, A) == (0, 1, 2)

    def test_too_many(self):
        with pytest.raises(ParameterError):
            align_endmembers(np.ones((9, 3)), np.ones((9, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            align_endmembers(np.ones((2, 3)), np.ones((3, 3)))


class TestNormalizeAbundance:
    def test_already_unit_max(self):
        S = np.array([[0.2], [1.0], [0.5]])
        np.testing.assert_array_equal(normalize_abundance_maps(S), S)

    def test_scaling(self):
        np.testing.assert_array_equal(normalize_abundance_maps(np.array([[0.0], [2.0], [4.0]]))[:, 0], [0, 0.5, 1])

    def test_zero_column(self):
        S = np.array([[0.0, 1.0], [0.0, 3.0]])
        out = normalize_abundance_maps(S)
        np.testing.assert_array_equal(out[:, 0], [0, 0])
        np.testing.assert_allclose(out[:, 1], [1 / 3, 1])

    def test_negative(self):
        with pytest.raises(ContractError):
            normalize_abundance_maps(np.array([[-0.1, 1.0]]))


def random_pair(rng, m=50, r=3, n=20):
    S = rng.dirichlet(np.ones(r), size=m)
    S[:r] = np.eye(r)
    return FactorPair(S, rng.uniform(0.1, 1.0, (r, n)))


class TestEvaluate:
    def test_perfect(self):
        gt = random_pair(np.random.default_rng(5))
        report = evaluate(gt, gt, ["a", "b", "c"])
        assert [c.name for c in report.per_endmember] == ["a", "b", "c"]
        assert all(c.sad == 0 and c.rmse == 0 for c in report.per_endmember)
        assert report.average_sad == 0 and report.average_rmse == 0
        assert report.permutation == (0, 1, 2)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        gt = random_pair(rng)
        est = FactorPair(rng.uniform(0, 2, gt.S.shape), rng.uniform(0.1, 1, gt.A.shape))
        base = evaluate(est, gt)
        for perm in itertools.permutations(range(3)):
            p = list(perm)
            shuffled = evaluate(FactorPair(est.S[:, p], est.A[p]), gt)
            for x, y in zip(base.per_endmember, shuffled.per_endmember):
                assert x.sad == y.sad and x.rmse == y.rmse

    def test_matches_composed_oracles(self):
        rng = np.random.default_rng(7)
        gt = random_pair(rng)
        est = FactorPair(rng.uniform(0, 3, gt.S.shape), rng.uniform(0.1, 1, gt.A.shape))
        report = evaluate(est, gt)
        perm = exhaustive_alignment(est.A, gt.A)
        for i, j in enumerate(perm):
            col = est.S[:, i] / est.S[:, i].max()
            expected_rmse = math.sqrt(sum((x - y) ** 2 for x, y in zip(col, gt.S[:, j])) / len(col))
            a, b = gt.A[j], est.A[i]
            expected_sad = math.acos(float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
            assert abs(report.per_endmember[j].rmse - expected_rmse) <= 1e-12
            assert abs(report.per_endmember[j].sad - expected_sad) <= 1e-12

    def test_averages_are_means(self):
        rng = np.random.default_rng(8)
        gt = random_pair(rng)
        est = FactorPair(rng.uniform(0, 1, gt.S.shape), rng.uniform(0.1, 1, gt.A.shape))
        report = evaluate(est, gt)
        assert report.average_sad == np.mean([c.sad for c in report.per_endmember])
        assert report.average_rmse == np.mean([c.rmse for c in report.per_endmember])
        assert sorted(report.permutation) == [0, 1, 2]

    def test_text_and_csv(self):
        gt = random_pair(np.random.default_rng(9))
        report = evaluate(gt, gt, ["Tree", "Water", "Dirt"])
        text = report.to_text()
        assert "Average" in text and "Water" in text
        lines = report.to_csv().splitlines()
        assert lines[0] == "class,sad,rmse"
        assert lines[-1].startswith("Average,")
        assert len(lines) == 5

    def test_shape_mismatch(self):
        rng = np.random.default_rng(10)
        with pytest.raises(ShapeError):
            evaluate(random_pair(rng, r=3), random_pair(rng, r=2))

    def test_name_count(self):
        gt = random_pair(np.random.default_rng(11))
        with pytest.raises(ShapeError):
            evaluate(gt, gt, ["x"])
