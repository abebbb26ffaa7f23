"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 reproduce the benchmark trends over ten seeds and take
several minutes each; they carry the ``slow`` marker but run by default.
"""
import time

import numpy as np
import pytest

from conftest import random_tabular
from rkhsmdp.bench import (
    BenchConfig,
    embedding_error,
    expectation_timing,
    loglog_slope,
    run_experiment1,
    run_experiment2,
    run_value_estimation,
    sweep_timing,
)
from rkhsmdp.embedding import cv_lambda, fit, fit_sparse
from rkhsmdp.environments import (
    GridworldSpec,
    PendulumSpec,
    evaluation_grid,
    exhaustive_sample,
    gridworld_mdp,
    gridworld_reward,
    gridworld_sample,
    pendulum_reward,
    pendulum_sample,
    pendulum_torques,
    tabular_sample,
)
from rkhsmdp.kernels import StateActionKernelConfig, knn_bandwidth
from rkhsmdp.oracle import exact_value_iteration, lemma11_gap, q_star
from rkhsmdp.planner import (
    GreedyPolicy,
    PlannerConfig,
    contraction_check,
    convergence_trace,
    evaluate_policy,
    value_iteration,
)


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def _pendulum_kernel(S):
    bw = knn_bandwidth(np.column_stack([S.states, S.actions]), 0.25, angular_dims=(0,))
    return StateActionKernelConfig(bw, "gaussian", bw, (0,))


def _non_increasing(means, errs, allowed=1):
    """At most ``allowed`` increases, each no larger than one standard error."""
    bad = []
    for i in range(len(means) - 1):
        rise = means[i + 1] - means[i]
        if rise > 0:
            bad.append(rise <= max(errs[i], errs[i + 1]))
    return len(bad) <= allowed and all(bad)


def _fmt(xs):
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


def test_c1_contraction(report):
    t0 = time.perf_counter()
    spec = GridworldSpec(n=10)
    S = gridworld_sample(gridworld_mdp(spec), 500, rng_seed=0)
    kernel = StateActionKernelConfig(2.0)
    lam, _ = cv_lambda(S, kernel, kernel.state, rng_seed=0)
    emb = fit(S, kernel, kernel.state, lam)
    cfg = PlannerConfig(0.9, (0, 1, 2, 3))
    ratio = contraction_check(emb, lambda X, a: gridworld_reward(spec, X), cfg, trials=1000, rng_seed=1)
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.9 + 1e-9 and elapsed < 30
    report(1, "sup-norm contraction", ok, f"max ratio {ratio:.6f} over 1000 pairs, {elapsed:.1f}s")


def test_c2_geometric_convergence(report):
    runs = []
    spec = GridworldSpec(n=10)
    S = gridworld_sample(gridworld_mdp(spec), 500, rng_seed=0)
    emb = fit(S, StateActionKernelConfig(2.0), None, 1e-4)
    reward = lambda X, a: gridworld_reward(spec, X)
    gcfg = PlannerConfig(0.9, (0, 1, 2, 3), 1000, 1e-9)
    runs.append(("grid VI", 0.9, value_iteration(emb, reward, gcfg, record_history=True)))
    runs.append(("grid PE", 0.9, evaluate_policy(emb, lambda X: np.zeros(len(X), int), reward, gcfg,
                                                 record_history=True)))
    pspec = PendulumSpec()
    for m, seed in ((200, 0), (400, 1)):
        P = pendulum_sample(pspec, m, 25, seed)
        k = _pendulum_kernel(P)
        lam, _ = cv_lambda(P, k, k.state, rng_seed=seed)
        pemb = fit(P, k, k.state, lam)
        pcfg = PlannerConfig(pspec.gamma, tuple(pendulum_torques(pspec)), 1000, 1e-9)
        runs.append((f"pendulum VI m={m}", pspec.gamma,
                     value_iteration(pemb, lambda X, a: pendulum_reward(X), pcfg, record_history=True)))
    worst = []
    for name, gamma, est in runs:
        e = convergence_trace(est.history)
        k = np.arange(e.size)
        worst.append(float(np.max(e / (gamma**k * e[0]))))
    ok = max(worst) <= 1 + 1e-9
    report(2, "geometric convergence", ok,
           ", ".join(f"{n}: max e_k/(g^k e_0) = {w:.9f}" for (n, _, _), w in zip(runs, worst)))


def test_c3_oracle_equivalence(report):
    t0 = time.perf_counter()
    spec = GridworldSpec(n=5)
    mdp = gridworld_mdp(spec)
    S = exhaustive_sample(mdp, 200)
    emb = fit(S, StateActionKernelConfig(0.5), None, 1e-8)
    est = value_iteration(emb, lambda X, a: gridworld_reward(spec, X),
                          PlannerConfig(spec.gamma, (0, 1, 2, 3), 100_000, 1e-9))
    V_star, pi_star = exact_value_iteration(mdp, tol=1e-13)
    err = float(np.max(np.abs(est(mdp.coords) - V_star)))
    Q = np.sort(q_star(mdp, V_star), axis=1)
    clear = Q[:, -1] - Q[:, -2] > 1e-2
    match = np.array_equal(GreedyPolicy(est).action_indices(mdp.coords)[clear], pi_star[clear])
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-2 and match and elapsed < 60
    report(3, "oracle equivalence", ok,
           f"sup |V_hat - V*| = {err:.2e}, greedy = pi* on {clear.sum()}/25 clear states: {match}, {elapsed:.1f}s")


def test_c4_greedy_policy_lemma(report):
    rng = np.random.default_rng(11)
    violations, trials, margin = 0, 0, np.inf
    for _ in range(50):
        mdp = random_tabular(rng, n=6, k=3, gamma=float(rng.uniform(0.1, 0.99)))
        V_star, _ = exact_value_iteration(mdp, tol=1e-13)
        Qs = q_star(mdp, V_star)
        for _ in range(100):
            Q = Qs + rng.normal(scale=10 ** rng.uniform(-3, 1), size=Qs.shape)
            lhs, rhs = lemma11_gap(mdp, Q, V_star)
            trials += 1
            violations += lhs > rhs
            margin = min(margin, rhs - lhs)
    report(4, "greedy-policy lemma", violations == 0 and trials == 5000,
           f"{violations} violations in {trials} trials, smallest slack {margin:.3e}")


def test_c5_consistency_trend(report):
    mdp = random_tabular(np.random.default_rng(2024), n=10, k=2)
    kernel = StateActionKernelConfig(1.0)
    means, errs = [], []
    for m in (100, 400, 1600):
        e = [embedding_error(fit(tabular_sample(mdp, m, s), kernel, kernel.state, m ** -0.25), mdp, kernel.state)
             for s in range(10)]
        means.append(np.mean(e))
        errs.append(np.std(e, ddof=1) / np.sqrt(len(e)))
    ok = all(b <= a for a, b in zip(means, means[1:]))
    report(5, "consistency trend", ok, f"mean sup RKHS error at m=100,400,1600: {_fmt(means)}")


@pytest.mark.slow
def test_c6_gridworld_trend(report):
    t0 = time.perf_counter()
    run = run_experiment1([1000, 5000], list(range(10)), grid_n=50)
    elapsed = time.perf_counter() - t0
    g1, g5 = run.mean(1000, "gap"), run.mean(5000, "gap")
    ok = g5 < g1 and elapsed < 1800
    report(6, "gridworld 1000 vs 5000", ok,
           f"mean gap {g1:.4f} (se {run.stderr(1000, 'gap'):.4f}) -> {g5:.4f} (se {run.stderr(5000, 'gap'):.4f}), "
           f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_c7_pendulum_trend(report):
    t0 = time.perf_counter()
    sizes, seeds = [100, 200, 400, 800], list(range(10))
    control = run_experiment2(sizes, seeds)
    estimation = run_value_estimation(sizes, seeds, env="pendulum")
    elapsed = time.perf_counter() - t0
    gap = [control.mean(m, "gap") for m in sizes]
    gap_se = [control.stderr(m, "gap") for m in sizes]
    pred = [estimation.mean(m, "prediction_mean") for m in sizes]
    pred_se = [estimation.stderr(m, "prediction_mean") for m in sizes]
    ok = _non_increasing(gap, gap_se) and _non_increasing(pred, pred_se) and elapsed < 1800
    report(7, "pendulum trend", ok,
           f"gap {_fmt(gap)} se {_fmt(gap_se)}; prediction error {_fmt(pred)} se {_fmt(pred_se)}; "
           f"{elapsed / 60:.1f} min")


def test_c8_sweep_scaling(report):
    sizes = [250, 500, 1000, 2000]
    t = sweep_timing(sizes, action_count=4, sweeps=50, repeats=5)
    slope = loglog_slope(sizes, t)
    report(8, "per-sweep cost O(m^2 |A|)", 1.7 <= slope <= 2.3,
           f"seconds/sweep {_fmt(t)}, log-log slope {slope:.3f}")


def test_c9_sparse_path(report):
    spec = PendulumSpec()
    S = pendulum_sample(spec, 2000, 25, 0)
    kernel = _pendulum_kernel(S)
    lam, _ = cv_lambda(S, kernel, kernel.state, rng_seed=0)
    cfg = PlannerConfig(spec.gamma, tuple(pendulum_torques(spec)), 1000, 1e-9)
    reward = lambda X, a: pendulum_reward(X)
    sparse_emb = fit_sparse(S, kernel, kernel.state, lam, tol=1e-6)
    sparse = value_iteration(sparse_emb, reward, cfg)
    grid = evaluation_grid(spec)
    v_sparse = sparse(grid)
    del sparse
    dense = value_iteration(fit(S, kernel, kernel.state, lam), reward, cfg)
    diff = float(np.max(np.abs(dense(grid) - v_sparse)))
    del dense
    sizes = [1000, 2000, 4000, 8000]
    per = expectation_timing(sizes, rank=100)
    slope = loglog_slope(sizes, per)
    ok = diff <= 1e-2 and slope < 1
    report(9, "sparse path", ok,
           f"rank {sparse_emb.rank}, lambda {lam:.3g}, sup grid |dense - sparse| = {diff:.2e}; "
           f"per-expectation seconds at rank 100 {_fmt(per)}, slope {slope:.3f}")


def test_c10_normalisation_and_boundedness(report):
    rng = np.random.default_rng(5)
    spec = PendulumSpec()
    S = pendulum_sample(spec, 400, 25, 0)
    pend = fit(S, _pendulum_kernel(S), None, 1e-4)
    gspec = GridworldSpec(n=10)
    G = gridworld_sample(gridworld_mdp(gspec), 400, rng_seed=0)
    grid = fit(G, StateActionKernelConfig(1.5), None, 1e-4)
    n = 5000
    Xp = np.column_stack([rng.uniform(-np.pi, np.pi, n), rng.uniform(-7, 7, n)])
    Ap = rng.choice(pendulum_torques(spec), n)
    Xg = rng.integers(0, 10, size=(n, 2)).astype(float)
    Ag = rng.integers(0, 4, n)
    norm_bad = bound_bad = 0
    for emb, X, A in ((pend, Xp, Ap), (grid, Xg, Ag)):
        W = emb.normalized_weight_matrix(X, A)
        norm_bad += int(np.sum(np.abs(np.abs(W).sum(axis=1) - 1) > 1e-12))
        F = rng.normal(scale=10 ** rng.uniform(-3, 3, size=(n, 1)), size=(n, emb.m))
        est = np.einsum("qi,qi->q", W, F)
        bound_bad += int(np.sum(np.abs(est) > np.abs(F).max(axis=1) * (1 + 1e-12)))
    report(10, "normalisation and boundedness", norm_bad == 0 and bound_bad == 0,
           f"{2 * n} queries: {norm_bad} sum|alpha_hat| != 1, {bound_bad} |E_hat f| > ||f||_inf")
