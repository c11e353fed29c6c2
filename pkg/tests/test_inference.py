import math

import numpy as np
import pytest

from crfsdca.errors import InconsistentMarginalsError
from crfsdca.inference import (
    MarginalSet,
    entropy_marginals,
    enumerate_oracle,
    joint_from_marginals,
    kl_marginals,
    marginal_oracle,
    viterbi,
)

from conftest import random_consistent_marginals, random_scores


class TestMarginalOracle:
    def test_zero_scores_uniform(self):
        m, log_z = marginal_oracle(np.zeros((3, 2)), np.zeros((2, 2)))
        assert np.allclose(m.unary, 0.5, atol=1e-12)
        assert np.allclose(m.pairwise, 0.25, atol=1e-12)
        assert log_z == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_single_node_softmax(self, rng):
        u = rng.uniform(-5, 5, (1, 4))
        m, log_z = marginal_oracle(u, np.zeros((4, 4)))
        z = np.exp(u[0]).sum()
        assert log_z == pytest.approx(math.log(z), abs=1e-10)
        assert np.allclose(m.unary[0], np.exp(u[0]) / z, atol=1e-12)
        assert m.pairwise.shape == (0, 4, 4)

    def test_matches_enumeration(self, rng):
        for _ in range(25):
            t, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            u, p = random_scores(rng, t, k)
            m, log_z = marginal_oracle(u, p)
            e = enumerate_oracle(u, p)
            assert abs(log_z - e.log_z) < 1e-8
            assert np.max(np.abs(m.unary - e.marginals.unary)) < 1e-10
            if t > 1:
                assert np.max(np.abs(m.pairwise - e.marginals.pairwise)) < 1e-10
            m.validate()

    def test_rejects_nonfinite_scores(self):
        u = np.zeros((2, 2))
        u[0, 0] = np.inf
        with pytest.raises(ValueError):
            marginal_oracle(u, np.zeros((2, 2)))

    def test_extreme_scores_stay_finite(self):
        u = np.array([[500.0, -500.0], [-500.0, 500.0]])
        p = np.array([[300.0, -300.0], [-300.0, 300.0]])
        m, log_z = marginal_oracle(u, p)
        assert np.isfinite(log_z)
        assert np.all(np.isfinite(m.log_unary))
        m.validate()


class TestViterbi:
    def test_zero_scores_tie_breaks_to_zero(self):
        assert viterbi(np.zeros((4, 3)), np.zeros((3, 3))).tolist() == [0, 0, 0, 0]

    def test_peaked_unary_no_transitions(self, rng):
        u = rng.uniform(-1, 1, (5, 3))
        u[np.arange(5), [2, 0, 1, 1, 2]] += 100.0
        assert viterbi(u, np.zeros((3, 3))).tolist() == [2, 0, 1, 1, 2]

    def test_matches_exhaustive_argmax(self, rng):
        for _ in range(20):
            u, p = random_scores(rng, 4, 3)
            labels = viterbi(u, p)
            e = enumerate_oracle(u, p)
            best = e.log_joint[
                int(np.ravel_multi_index(labels, (3,) * 4))
            ]
            assert best == pytest.approx(float(e.log_joint.max()), abs=1e-9)


class TestEntropy:
    def test_uniform_entropy(self):
        for t, k in [(1, 2), (2, 3), (5, 2), (4, 3)]:
            m = MarginalSet.uniform(t, k)
            assert entropy_marginals(m) == pytest.approx(t * math.log(k), abs=1e-12)

    def test_point_mass_entropy_is_zero(self):
        m = MarginalSet.point_mass([0, 1, 1, 0], 2)
        assert entropy_marginals(m) == pytest.approx(0.0, abs=1e-12)

    def test_matches_joint_entropy(self, rng):
        for _ in range(15):
            u, p = random_scores(rng, 4, 3)
            m, _ = marginal_oracle(u, p)
            e = enumerate_oracle(u, p)
            joint_entropy = -float(e.joint @ e.log_joint)
            assert entropy_marginals(m) == pytest.approx(joint_entropy, abs=1e-8)

    def test_bounds(self, rng):
        for _ in range(25):
            t, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            m = random_consistent_marginals(rng, t, k)
            h = entropy_marginals(m)
            assert -1e-10 <= h <= t * math.log(k) + 1e-10

    def test_rejects_inconsistent_input(self):
        unary = np.array([[0.9, 0.1], [0.5, 0.5], [0.5, 0.5]])
        pairwise = np.full((2, 2, 2), 0.25)  # edge tables say both nodes are uniform
        m = MarginalSet.from_linear(unary, pairwise)
        with pytest.raises(InconsistentMarginalsError):
            entropy_marginals(m)


class TestKl:
    def test_identical_sets_give_zero(self, rng):
        m = random_consistent_marginals(rng, 4, 3)
        assert kl_marginals(m, m) == pytest.approx(0.0, abs=1e-12)

    def test_single_node_is_categorical_kl(self, rng):
        m = random_consistent_marginals(rng, 1, 3)
        n = random_consistent_marginals(rng, 1, 3)
        expect = float((m.unary[0] * (np.log(m.unary[0]) - np.log(n.unary[0]))).sum())
        assert kl_marginals(m, n) == pytest.approx(expect, abs=1e-12)

    def test_matches_joint_kl(self, rng):
        for _ in range(10):
            m = random_consistent_marginals(rng, 4, 3)
            n = random_consistent_marginals(rng, 4, 3)
            pm = joint_from_marginals(m)
            pn = joint_from_marginals(n)
            joint_kl = float((pm * (np.log(pm) - np.log(pn))).sum())
            assert kl_marginals(m, n) == pytest.approx(joint_kl, abs=1e-8)

    def test_nonnegative_for_consistent_pairs(self, rng):
        for _ in range(30):
            t, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            m = random_consistent_marginals(rng, t, k)
            n = random_consistent_marginals(rng, t, k)
            assert kl_marginals(m, n) >= -1e-9

    def test_support_violation_is_infinite(self):
        m = MarginalSet.uniform(2, 2)
        n = MarginalSet.point_mass([0, 0], 2)
        assert kl_marginals(m, n) == math.inf

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            kl_marginals(
                random_consistent_marginals(rng, 2, 2),
                random_consistent_marginals(rng, 3, 2),
            )


class TestEnumeration:
    def test_zero_scores_uniform_joint(self):
        e = enumerate_oracle(np.zeros((3, 2)), np.zeros((2, 2)))
        assert np.allclose(e.joint, 1 / 8, atol=1e-15)

    def test_joint_reconstruction(self, rng):
        for _ in range(15):
            t, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            u, p = random_scores(rng, t, k)
            m, log_z = marginal_oracle(u, p)
            e = enumerate_oracle(u, p)
            assert np.max(np.abs(joint_from_marginals(m) - e.joint)) < 1e-10
            assert abs(log_z - e.log_z) < 1e-8

    def test_reconstruction_handles_point_mass(self):
        m = MarginalSet.point_mass([1, 0, 1], 2)
        joint = joint_from_marginals(m)
        assert joint.sum() == pytest.approx(1.0, abs=1e-12)
        assert joint.max() == pytest.approx(1.0, abs=1e-12)

    def test_size_guard(self):
        with pytest.raises(ValueError):
            enumerate_oracle(np.zeros((21, 2)), np.zeros((2, 2)))


class TestMarginalSetOps:
    def test_convex_combination_preserves_consistency(self, rng):
        for _ in range(10):
            t, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
            m = random_consistent_marginals(rng, t, k)
            n = random_consistent_marginals(rng, t, k)
            for gamma in (0.0, 0.25, 0.5, 0.75, 1.0):
                m.convex_combination(n, gamma).validate()

    def test_point_mass_and_uniform_are_consistent(self):
        MarginalSet.point_mass([0, 2, 1], 3).validate()
        MarginalSet.uniform(4, 3).validate()

    def test_validate_catches_log_desync(self, rng):
        m = random_consistent_marginals(rng, 3, 2)
        m.log_unary[0, 0] += 0.5
        with pytest.raises(InconsistentMarginalsError):
            m.validate()
