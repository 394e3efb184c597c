import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partcom import sinkhorn as sk

from oracles import brute_force_balanced


def test_constant_scores_give_uniform_plan():
    res = sk.sinkhorn_assign(np.full((6, 3), 2.5))
    np.testing.assert_allclose(res.plan, 1.0 / 3.0, atol=1e-12)
    assert res.converged
    rows, cols = sk.marginal_violation(res.plan)
    assert rows <= 1e-12 and cols <= 1e-12


def test_dominant_diagonal():
    res = sk.sinkhorn_assign(np.array([[10.0, 0.0], [0.0, 10.0]]), epsilon=0.05)
    np.testing.assert_allclose(res.plan, np.eye(2), atol=1e-4)


def test_large_scores_do_not_overflow():
    # exp(1000 / 0.05) would overflow outside the log domain
    scores = np.random.default_rng(0).uniform(-1000, 1000, size=(12, 4))
    res = sk.sinkhorn_assign(scores, epsilon=0.05)
    assert np.all(np.isfinite(res.plan))


def test_feasibility_on_random_problems():
    rng = np.random.default_rng(1)
    for _ in range(100):
        res = sk.sinkhorn_assign(rng.normal(size=(64, 4)), epsilon=0.05)
        assert res.converged
        rows, cols = sk.marginal_violation(res.plan)
        assert rows <= 1e-6 and cols <= 1e-6
        assert res.plan.min() >= 0.0 and res.plan.max() <= 1.0 + 1e-6  # rows carry the residual


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=(3, 16, 4))
    batch = sk.sinkhorn_assign(scores, tol=1e-10, check_every=1)
    for b in range(3):
        one = sk.sinkhorn_assign(scores[b], tol=1e-10, check_every=1)
        np.testing.assert_allclose(batch.plan[b], one.plan, atol=1e-8)


def test_fractional_column_mass():
    # L/M need not be an integer
    res = sk.sinkhorn_assign(np.random.default_rng(3).normal(size=(10, 4)))
    np.testing.assert_allclose(res.plan.sum(axis=0), 2.5, atol=1e-6)


def test_non_convergence_is_flagged():
    res = sk.sinkhorn_assign(np.random.default_rng(4).normal(size=(32, 4)) * 5, epsilon=0.01, max_iters=2)
    assert not res.converged and res.iterations == 2 and res.violation > 1e-6


@pytest.mark.parametrize("bad", [np.array([[np.nan, 0.0]]), np.array([[np.inf, 0.0]])])
def test_rejects_non_finite_scores(bad):
    with pytest.raises(ValueError):
        sk.sinkhorn_assign(bad)


def test_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        sk.sinkhorn_assign(np.zeros((2, 2)), epsilon=0.0)


def test_rounded_plan_matches_brute_force_optimum():
    rng = np.random.default_rng(5)
    for _ in range(50):
        scores = rng.normal(size=(8, 2))
        labels = sk.round_balanced(sk.sinkhorn_assign(scores, epsilon=0.01).plan)
        _, best = brute_force_balanced(scores)
        assert np.bincount(labels, minlength=2).tolist() == [4, 4]
        assert sk.assignment_objective(scores, labels) == pytest.approx(best, abs=1e-12)


def test_soft_objective_within_one_percent_of_optimum():
    rng = np.random.default_rng(6)
    for _ in range(50):
        scores = rng.normal(size=(8, 2))
        plan = sk.sinkhorn_assign(scores, epsilon=0.005).plan
        _, best = brute_force_balanced(scores)
        assert abs(np.sum(plan * scores) - best) <= 0.01 * abs(best)


def test_entropy_non_increasing_as_epsilon_shrinks():
    rng = np.random.default_rng(7)
    for _ in range(20):
        scores = rng.normal(size=(16, 4))
        H = [sk.entropy(sk.sinkhorn_assign(scores, epsilon=e).plan) for e in (0.5, 0.05, 0.005)]
        assert H[0] >= H[1] - 1e-9 and H[1] >= H[2] - 1e-9


def test_round_balanced_capacity():
    labels = sk.round_balanced(np.random.default_rng(8).random((10, 4)))
    assert sorted(np.bincount(labels, minlength=4).tolist()) == [2, 2, 3, 3]


# -- hard assignment --------------------------------------------------------

def test_hard_assign_identity():
    assert sk.hard_assign(np.eye(5)).tolist() == [0, 1, 2, 3, 4]


def test_hard_assign_tie_goes_to_lowest_index():
    assert sk.hard_assign(np.full((3, 4), 0.25)).tolist() == [0, 0, 0]


def test_hard_assign_matches_scan():
    plan = np.random.default_rng(9).random((16, 4))
    expected = []
    for row in plan:
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        expected.append(best)
    assert sk.hard_assign(plan).tolist() == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 24), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_marginals_hold_for_any_shape(L, M, seed):
    scores = np.random.default_rng(seed).normal(size=(L, M))
    # near-permutation optima converge slowly at small epsilon, so keep scores/eps moderate
    res = sk.sinkhorn_assign(scores, epsilon=0.5)
    assert res.converged
    rows, cols = sk.marginal_violation(res.plan)
    assert max(rows, cols) <= 1e-6
