import numpy as np
import pytest
import scipy.sparse as sp

from rkhsmdp.oracle import (
    TabularMDP,
    bellman,
    exact_policy_value,
    exact_value_iteration,
    greedy,
    lemma11_gap,
    q_star,
)


def random_mdp(rng, n=6, k=3, gamma=0.9):
    P = rng.random((k, n, n)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    return TabularMDP(tuple(P), rng.normal(size=(n, k)), gamma)


def two_state():
    stay = np.array([[1.0, 0.0], [0.0, 1.0]])
    go = np.array([[0.0, 1.0], [0.0, 1.0]])
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMDP((stay, go), r, 0.5)


def test_validation():
    with pytest.raises(ValueError):
        TabularMDP((np.array([[0.5, 0.4], [0, 1]]),), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        TabularMDP((np.eye(2),), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        TabularMDP((np.array([[1.5, -0.5], [0, 1]]),), np.zeros((2, 1)), 0.5)


def test_single_state_geometric():
    mdp = TabularMDP((np.ones((1, 1)),), np.ones((1, 1)), 0.9)
    V, pi = exact_value_iteration(mdp, 1e-12)
    assert V[0] == pytest.approx(10.0, abs=1e-11)
    assert q_star(mdp, V)[0, 0] == pytest.approx(10.0, abs=1e-11)


def test_zero_reward():
    mdp = random_mdp(np.random.default_rng(0))
    mdp = TabularMDP(mdp.P, np.zeros_like(mdp.r), 0.9)
    V, pi = exact_value_iteration(mdp)
    np.testing.assert_array_equal(V, 0.0)
    np.testing.assert_array_equal(pi, 0)


def test_two_state_example():
    mdp = two_state()
    V, pi = exact_value_iteration(mdp, 1e-12)
    np.testing.assert_allclose(V, [1.0, 2.0], atol=1e-11)
    assert pi[0] == 1
    Q = q_star(mdp, V)
    assert Q[0, 1] == pytest.approx(1.0, abs=1e-11)
    assert Q[0, 0] == pytest.approx(0.5, abs=1e-11)
    # brute force: iterate the hand Bellman recursion
    v = np.zeros(2)
    for _ in range(200):
        v = np.array([max(0 + 0.5 * v[0], 0 + 0.5 * v[1]), 1 + 0.5 * v[1]])
    np.testing.assert_allclose(V, v, atol=1e-11)


def test_gamma_zero():
    mdp = random_mdp(np.random.default_rng(1), gamma=0.0)
    V, pi = exact_value_iteration(mdp)
    np.testing.assert_array_equal(V, mdp.r.max(axis=1))
    np.testing.assert_array_equal(q_star(mdp, V), mdp.r)
    pol = np.arange(mdp.n_states) % mdp.n_actions
    np.testing.assert_allclose(exact_policy_value(mdp, pol), mdp.r[np.arange(mdp.n_states), pol])


def test_random_walk_cycle():
    P = np.zeros((3, 3))
    for i in range(3):
        P[i, (i + 1) % 3] = P[i, (i - 1) % 3] = 0.5
    mdp = TabularMDP((P,), np.ones((3, 1)), 0.9)
    np.testing.assert_allclose(exact_policy_value(mdp, [0, 0, 0]), 10.0, atol=1e-12)


def test_policy_value_matches_iteration():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng)
    pi = rng.integers(mdp.n_actions, size=mdp.n_states)
    P = mdp.dense_P()[pi, np.arange(mdp.n_states)]
    r = mdp.r[np.arange(mdp.n_states), pi]
    v = np.zeros(mdp.n_states)
    for _ in range(10_000):
        v = r + mdp.gamma * P @ v
    np.testing.assert_allclose(exact_policy_value(mdp, pi), v, atol=1e-8)


def test_sparse_and_dense_agree():
    mdp = random_mdp(np.random.default_rng(5))
    smdp = TabularMDP(tuple(sp.csr_matrix(p) for p in mdp.P), mdp.r, mdp.gamma)
    V, pi = exact_value_iteration(mdp)
    Vs, pis = exact_value_iteration(smdp)
    np.testing.assert_allclose(V, Vs, atol=1e-12)
    np.testing.assert_array_equal(pi, pis)
    np.testing.assert_allclose(exact_policy_value(mdp, pi), exact_policy_value(smdp, pi), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_and_optimality(seed):
    mdp = random_mdp(np.random.default_rng(seed))
    tol = 1e-9
    V, pi = exact_value_iteration(mdp, tol)
    assert np.max(np.abs(bellman(mdp, V) - V)) <= tol
    np.testing.assert_allclose(exact_policy_value(mdp, pi), V, atol=tol)
    np.testing.assert_array_equal(greedy(q_star(mdp, V)), pi)


def test_lemma11_trivial_cases():
    mdp = random_mdp(np.random.default_rng(7))
    V, pi = exact_value_iteration(mdp, 1e-13)
    V = exact_policy_value(mdp, pi)
    Qs = q_star(mdp, V)
    assert lemma11_gap(mdp, Qs, V) == (0.0, 0.0)
    lhs, rhs = lemma11_gap(mdp, Qs + 3.0, V)
    assert lhs == 0.0 and rhs > 0


def test_lemma11_random_perturbations():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng)
    V, pi = exact_value_iteration(mdp, 1e-13)
    V = exact_policy_value(mdp, pi)
    Qs = q_star(mdp, V)
    for _ in range(100):
        lhs, rhs = lemma11_gap(mdp, Qs + rng.normal(scale=rng.uniform(0.01, 2), size=Qs.shape), V)
        assert lhs <= rhs
