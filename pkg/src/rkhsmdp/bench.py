"""End-to-end experiment harness.

Each experiment runs sample -> cross-validate -> fit -> plan -> compare for
every (size, seed) cell and stores scalar metrics in long format.  Cells are
pure functions of their inputs, so a run is reproducible from its arguments.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import TransitionSample, cv_kernel, cv_lambda, default_lambda_grid, fit, fit_sparse, l1_normalize
from .environments import (
    GridworldSpec,
    PendulumSpec,
    evaluation_grid,
    gridworld_mdp,
    gridworld_reward,
    gridworld_sample,
    pendulum_policy_sample,
    pendulum_reference_value,
    pendulum_reward,
    pendulum_sample,
    pendulum_torques,
    tabular_sample,
)
from .kernels import StateActionKernelConfig, StateKernelConfig, knn_bandwidth, state_gram
from .oracle import exact_policy_value, exact_value_iteration
from .planner import GreedyPolicy, PlannerConfig, bellman_operator, convergence_trace, evaluate_policy, value_iteration

__all__ = [
    "BenchConfig",
    "BenchRun",
    "run_experiment1",
    "run_experiment2",
    "run_value_estimation",
    "grid_cell",
    "pendulum_cell",
    "value_estimation_cell",
    "embedding_error",
    "expectation_timing",
    "sweep_timing",
    "loglog_slope",
    "write_outputs",
    "heatmap_svg",
    "ACTION_COLORS",
]


@dataclass(frozen=True)
class BenchConfig:
    """Knobs shared by the experiment pipelines."""

    grid: GridworldSpec = GridworldSpec()
    # candidate input bandwidths (cells); the output kernel width stays fixed for CV
    grid_bandwidths: tuple = (1.0, 2.0, 3.0, 5.0, 8.0)
    grid_output_bandwidth: float = 3.0
    pendulum: PendulumSpec = PendulumSpec()
    action_count: int = 25
    knn_fraction: float = 0.25
    reference_resolution: int = 97
    eval_points: int = 25
    lam_grid: tuple = tuple(default_lambda_grid())
    folds: int = 5
    max_iters: int = 1000
    threshold: float = 1e-6
    normalized: bool = True
    sparse: bool = False
    sparse_tol: float = 1e-6


@dataclass
class BenchRun:
    """Per-(size, seed) metrics in long format plus grids for figures."""

    experiment: str
    sizes: list
    seeds: list
    records: list = field(default_factory=list)  # (size, seed, metric, value)
    grids: dict = field(default_factory=dict)  # (size, seed) -> {name: 2-D array}

    def add(self, size, seed, metrics: dict):
        for name, value in metrics.items():
            value = float(value)
            if not math.isfinite(value):
                raise ArithmeticError(f"{self.experiment}: metric {name} at size {size}, seed {seed} is {value}")
            self.records.append((size, seed, name, value))

    def metric(self, size, name) -> np.ndarray:
        return np.array([v for s, _, n, v in self.records if s == size and n == name])

    @property
    def metric_names(self) -> list:
        return list(dict.fromkeys(n for _, _, n, _ in self.records))

    def summary(self) -> list[tuple]:
        """(size, metric, mean, stderr, count) rows in a fixed order."""
        rows = []
        for size in self.sizes:
            for name in self.metric_names:
                v = self.metric(size, name)
                if v.size == 0:
                    continue
                se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
                rows.append((size, name, float(v.mean()), se, int(v.size)))
        return rows

    def mean(self, size, name) -> float:
        return float(self.metric(size, name).mean())

    def stderr(self, size, name) -> float:
        v = self.metric(size, name)
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def _add_context(err: BaseException, where: str):
    """Prefix the message with the run cell, keeping type and attributes."""
    if err.args and isinstance(err.args[0], str):
        err.args = (f"{where}: {err.args[0]}",) + err.args[1:]
    else:
        err.args = (where,) + err.args


def _planner(cfg: BenchConfig, gamma, actions) -> PlannerConfig:
    return PlannerConfig(gamma, tuple(actions), cfg.max_iters, cfg.threshold, cfg.normalized)


def _fit(sample, kernel, state_kernel, lam, cfg: BenchConfig):
    if cfg.sparse:
        return fit_sparse(sample, kernel, state_kernel, lam, tol=cfg.sparse_tol)
    return fit(sample, kernel, state_kernel, lam)


def _residual_ratio(history, gamma) -> float:
    """Largest ``e_k / (gamma^k e_0)``; at most 1 for a gamma-contraction."""
    e = convergence_trace(history)
    if e[0] == 0 or gamma == 0:
        return 0.0 if np.all(e[1:] == 0) else math.inf
    k = np.arange(e.size)
    return float(np.max(e / (gamma**k * e[0])))


def _plan_metrics(est, gamma, fit_s, plan_s):
    return {
        "iterations": est.iterations,
        "final_residual": est.final_error,
        "residual_ratio_max": _residual_ratio(est.history, gamma),
        "fit_seconds": fit_s,
        "plan_seconds": plan_s,
        "sweep_seconds": plan_s / max(est.iterations, 1),
    }


# -- gridworld ----------------------------------------------------------------

@lru_cache(maxsize=4)
def _grid_problem(spec: GridworldSpec):
    mdp = gridworld_mdp(spec)
    V, pi = exact_value_iteration(mdp, tol=1e-10)
    return mdp, V, pi


def grid_cell(sample: TransitionSample, cfg: BenchConfig = BenchConfig(), rng_seed=0,
              lam: float | None = None, kernel: StateActionKernelConfig | None = None):
    """Metrics and figure grids for one gridworld sample.

    ``lam``/``kernel`` bypass cross-validation when given.
    """
    spec = cfg.grid
    mdp, V_star, _ = _grid_problem(spec)
    out_kernel = StateKernelConfig(cfg.grid_output_bandwidth)
    t0 = time.perf_counter()
    if kernel is None:
        cands = [StateActionKernelConfig(bw) for bw in cfg.grid_bandwidths]
        if lam is None:
            kernel, lam, _ = cv_kernel(sample, cands, out_kernel, cfg.lam_grid, cfg.folds, rng_seed)
        else:
            kernel = cands[0]
    elif lam is None:
        lam, _ = cv_lambda(sample, kernel, out_kernel, cfg.lam_grid, cfg.folds, rng_seed)
    emb = _fit(sample, kernel, out_kernel, lam, cfg)
    t1 = time.perf_counter()
    reward = lambda X, a: gridworld_reward(spec, X)
    est = value_iteration(emb, reward, _planner(cfg, spec.gamma, range(4)), record_history=True)
    t2 = time.perf_counter()
    coords = mdp.coords
    pi = GreedyPolicy(est).action_indices(coords)
    V_pi = exact_policy_value(mdp, pi)  # always the oracle, never the estimate
    V_hat = est(coords)
    metrics = {
        "gap": np.mean(V_star - V_pi),
        "estimate_error": np.mean(np.abs(V_hat - V_pi)),
        "prediction_sup": np.max(np.abs(V_hat - V_star)),
        "lambda": lam,
        "bandwidth": kernel.state_bandwidth,
        **_plan_metrics(est, spec.gamma, t1 - t0, t2 - t1),
    }
    n = spec.n
    grids = {"true_value": V_pi.reshape(n, n), "estimated_value": V_hat.reshape(n, n),
             "policy": pi.reshape(n, n).astype(float)}
    return metrics, grids


def run_experiment1(sizes: Sequence[int], seeds: Sequence[int], grid_n: int | None = None,
                    cfg: BenchConfig = BenchConfig()) -> BenchRun:
    """Noisy gridworld: gap of the learned greedy policy to the optimum."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if grid_n is not None:
        cfg = replace(cfg, grid=replace(cfg.grid, n=grid_n))
    mdp, _, _ = _grid_problem(cfg.grid)
    run = BenchRun("grid", list(sizes), list(seeds))
    for size in sizes:
        for seed in seeds:
            try:
                metrics, grids = grid_cell(gridworld_sample(mdp, size, seed), cfg, seed)
            except Exception as err:
                _add_context(err, f"grid run (size {size}, seed {seed})")
                raise
            run.add(size, seed, metrics)
            run.grids[(size, seed)] = grids
    return run


# -- pendulum -------------------------------------------------------------------

@lru_cache(maxsize=4)
def _reference(spec: PendulumSpec, resolution: int, action_count: int, gamma: float):
    return pendulum_reference_value(spec, resolution, gamma, action_count)


def _pendulum_kernel(sample: TransitionSample, fraction: float) -> StateActionKernelConfig:
    joint = np.column_stack([sample.states, sample.actions])
    bw = knn_bandwidth(joint, fraction, angular_dims=(0,))
    return StateActionKernelConfig(bw, "gaussian", bw, (0,))


def _pendulum_lambda(sample, kernel, cfg, rng_seed, lam):
    if lam is not None:
        return lam
    return cv_lambda(sample, kernel, kernel.state, cfg.lam_grid, cfg.folds, rng_seed)[0]


def pendulum_cell(sample: TransitionSample, cfg: BenchConfig = BenchConfig(), rng_seed=0,
                  lam: float | None = None):
    """Control run on one pendulum sample; the learned greedy policy is scored
    exactly on the reference grid MDP."""
    spec = cfg.pendulum
    ref = _reference(spec, cfg.reference_resolution, cfg.action_count, spec.gamma)
    torques = pendulum_torques(spec, cfg.action_count)
    t0 = time.perf_counter()
    kernel = _pendulum_kernel(sample, cfg.knn_fraction)
    lam = _pendulum_lambda(sample, kernel, cfg, rng_seed, lam)
    emb = _fit(sample, kernel, kernel.state, lam, cfg)
    t1 = time.perf_counter()
    reward = lambda X, a: pendulum_reward(X)
    est = value_iteration(emb, reward, _planner(cfg, spec.gamma, torques), record_history=True)
    t2 = time.perf_counter()
    pol = GreedyPolicy(est)
    V_pi = ref.policy_value(pol.action_indices(ref.states))
    grid = evaluation_grid(spec, cfg.eval_points)
    V_hat = est(grid)
    V_ref = ref.readout(points=cfg.eval_points)
    p = cfg.eval_points
    metrics = {
        "gap": np.mean(V_ref - ref.readout(V_pi, cfg.eval_points)),
        "prediction_mean": np.mean(np.abs(V_hat - V_ref)),
        "prediction_sup": np.max(np.abs(V_hat - V_ref)),
        "lambda": lam,
        "bandwidth": kernel.state_bandwidth,
        **_plan_metrics(est, spec.gamma, t1 - t0, t2 - t1),
    }
    grids = {"estimated_value": V_hat.reshape(p, p),
             "true_value": ref.readout(V_pi, p).reshape(p, p),
             "policy": pol.action_indices(grid).reshape(p, p).astype(float)}
    return metrics, grids


def run_experiment2(sizes: Sequence[int], seeds: Sequence[int], cfg: BenchConfig = BenchConfig()) -> BenchRun:
    """Pendulum swing-up from uniformly sampled transitions."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    run = BenchRun("pendulum", list(sizes), list(seeds))
    for size in sizes:
        for seed in seeds:
            sample = pendulum_sample(cfg.pendulum, size, cfg.action_count, seed)
            try:
                metrics, grids = pendulum_cell(sample, cfg, seed)
            except Exception as err:
                _add_context(err, f"pendulum run (size {size}, seed {seed})")
                raise
            run.add(size, seed, metrics)
            run.grids[(size, seed)] = grids
    return run


# -- value estimation -----------------------------------------------------------

def value_estimation_cell(sample: TransitionSample, env: str = "pendulum", cfg: BenchConfig = BenchConfig(),
                          rng_seed=0, lam: float | None = None, kernel=None):
    """Predict the value of the reference policy from its own transitions."""
    t0 = time.perf_counter()
    if env == "pendulum":
        spec = cfg.pendulum
        ref = _reference(spec, cfg.reference_resolution, cfg.action_count, spec.gamma)
        kernel = kernel or _pendulum_kernel(sample, cfg.knn_fraction)
        lam = _pendulum_lambda(sample, kernel, cfg, rng_seed, lam)
        out_kernel, gamma = kernel.state, spec.gamma
        policy, reward, actions = ref.torque_at, (lambda X, a: pendulum_reward(X)), pendulum_torques(spec, cfg.action_count)
        X_eval = evaluation_grid(spec, cfg.eval_points)
        V_ref = ref.value_at(X_eval)
    elif env == "grid":
        spec = cfg.grid
        mdp, V_ref, pi_star = _grid_problem(spec)
        out_kernel, gamma = StateKernelConfig(cfg.grid_output_bandwidth), spec.gamma
        if kernel is None or lam is None:
            cands = [kernel] if kernel is not None else [StateActionKernelConfig(bw) for bw in cfg.grid_bandwidths]
            kernel, lam, _ = cv_kernel(sample, cands, out_kernel, cfg.lam_grid, cfg.folds, rng_seed)
        n = spec.n
        policy = lambda X: pi_star[np.rint(X[:, 0]).astype(int) * n + np.rint(X[:, 1]).astype(int)]
        reward, actions, X_eval = (lambda X, a: gridworld_reward(spec, X)), range(4), mdp.coords
    else:
        raise ValueError(f"unknown environment {env!r}")
    emb = _fit(sample, kernel, out_kernel, lam, cfg)
    t1 = time.perf_counter()
    est = evaluate_policy(emb, policy, reward, _planner(cfg, gamma, actions), record_history=True)
    t2 = time.perf_counter()
    err = np.abs(est(X_eval) - V_ref)
    return {
        "prediction_mean": err.mean(),
        "prediction_sup": err.max(),
        "lambda": lam,
        **_plan_metrics(est, gamma, t1 - t0, t2 - t1),
    }


def policy_sample(env: str, size: int, seed, cfg: BenchConfig = BenchConfig()) -> TransitionSample:
    """Uniform states with actions from the reference policy."""
    if env == "pendulum":
        spec = cfg.pendulum
        ref = _reference(spec, cfg.reference_resolution, cfg.action_count, spec.gamma)
        return pendulum_policy_sample(spec, size, ref.torque_at, seed)
    if env == "grid":
        mdp, _, pi_star = _grid_problem(cfg.grid)
        return tabular_sample(mdp, size, seed, policy=pi_star)
    raise ValueError(f"unknown environment {env!r}")


def run_value_estimation(sizes: Sequence[int], seeds: Sequence[int], env: str = "pendulum",
                         cfg: BenchConfig = BenchConfig()) -> BenchRun:
    if not sizes:
        raise ValueError("sizes must be non-empty")
    run = BenchRun("value-estimation", list(sizes), list(seeds))
    for size in sizes:
        for seed in seeds:
            try:
                metrics = value_estimation_cell(policy_sample(env, size, seed, cfg), env, cfg, seed)
            except Exception as err:
                _add_context(err, f"value estimation (size {size}, seed {seed})")
                raise
            run.add(size, seed, metrics)
    return run


# -- embedding consistency -------------------------------------------------------

def embedding_error(emb, mdp, state_kernel: StateKernelConfig, normalized: bool = True) -> float:
    """``sup_(x,a) ||mu_hat(x,a) - mu(x,a)||_L`` against a tabular MDP.

    The RKHS distance is the largest expectation error over functions in the
    unit ball of the output kernel, computed in closed form from Gram matrices.
    """
    Y = mdp.coords
    Xn = emb.sample.next_states
    L_tt = state_gram(Xn, Xn, state_kernel)
    L_ty = state_gram(Xn, Y, state_kernel)
    L_yy = state_gram(Y, Y, state_kernel)
    worst = 0.0
    for a in range(mdp.n_actions):
        W = emb.raw_weight_matrix(Y, np.full(mdp.n_states, a))
        if normalized:
            W = l1_normalize(W)
        P = mdp.dense_P()[a]
        sq = (np.einsum("qi,ij,qj->q", W, L_tt, W) - 2 * np.einsum("qi,ij,qj->q", W, L_ty, P)
              + np.einsum("qi,ij,qj->q", P, L_yy, P))
        worst = max(worst, float(np.sqrt(np.maximum(sq, 0.0)).max()))
    return worst


# -- timing -----------------------------------------------------------------------

def sweep_timing(sizes: Sequence[int], action_count: int = 4, sweeps: int = 50, rng_seed=0,
                 repeats: int = 3, spec: PendulumSpec = PendulumSpec(), lam: float = 1e-3) -> np.ndarray:
    """Seconds per synchronous sweep (operators prebuilt), best of ``repeats``."""
    out = []
    for m in sizes:
        S = pendulum_sample(spec, m, action_count, rng_seed)
        kernel = _pendulum_kernel(S, 0.25)
        emb = fit(S, kernel, kernel.state, lam)
        sweep = bellman_operator(emb, lambda X, a: pendulum_reward(X),
                                 PlannerConfig(spec.gamma, tuple(pendulum_torques(spec, action_count))))
        best = math.inf
        for _ in range(repeats):
            V = np.zeros(sweep.n)
            t = time.perf_counter()
            for _ in range(sweeps):
                V = sweep(V)
            best = min(best, (time.perf_counter() - t) / sweeps)
        out.append(best)
    return np.array(out)


def expectation_timing(sizes: Sequence[int], rank: int = 100, queries: int = 2000, rng_seed=0,
                       spec: PendulumSpec = PendulumSpec(), lam: float = 1e-3) -> np.ndarray:
    """Mean seconds per prepared low-rank expectation at a fixed rank."""
    out = []
    for m in sizes:
        S = pendulum_sample(spec, m, 25, rng_seed)
        kernel = _pendulum_kernel(S, 0.25)
        emb = fit_sparse(S, kernel, kernel.state, lam, tol=1e-300, max_rank=rank)
        proj = emb.project(pendulum_reward(S.next_states))
        Q = pendulum_sample(spec, 50, 25, rng_seed + 1)
        prepared = [emb.prepare(x, a) for x, a in zip(Q.states, Q.actions)]
        reps = max(1, queries // len(prepared))
        t = time.perf_counter()
        for _ in range(reps):
            for pq in prepared:
                pq.expect(proj)
        out.append((time.perf_counter() - t) / (reps * len(prepared)))
    return np.array(out)


def loglog_slope(sizes, seconds) -> float:
    """Least-squares slope of ``log t`` against ``log m``."""
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(seconds, float)), 1)[0])


# -- output -----------------------------------------------------------------------

# north, east, south, west
ACTION_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ffbf00")
_RAMP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], float)


def _ramp(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def heatmap_svg(grid, title: str = "", categorical: Sequence[str] | None = None, cell: int = 8) -> str:
    """SVG heatmap of a 2-D array indexed ``[x, y]`` with ``y`` pointing up.

    With ``categorical`` the values are indices into that colour list,
    otherwise a sequential ramp spans the data range.
    """
    G = np.asarray(grid, dtype=float)
    nx, ny = G.shape
    lo, hi = float(np.min(G)), float(np.max(G))
    span = hi - lo if hi > lo else 1.0
    head = 16 if title else 0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{nx * cell}" height="{ny * cell + head}">']
    if title:
        parts.append(f'<text x="2" y="12" font-size="11" font-family="sans-serif">{title}</text>')
    for i in range(nx):
        for j in range(ny):
            v = G[i, j]
            colour = categorical[int(v)] if categorical is not None else _ramp((v - lo) / span)
            parts.append(f'<rect x="{i * cell}" y="{head + (ny - 1 - j) * cell}" '
                         f'width="{cell}" height="{cell}" fill="{colour}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_outputs(run: BenchRun, out_dir) -> list[Path]:
    """Cell CSV, summary CSV, one grid CSV per (size, seed) and heatmaps for
    the first seed of every size.  Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    cells = out / f"{run.experiment}_cells.csv"
    with cells.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "size", "seed", "metric", "value"])
        for size, seed, name, value in run.records:
            w.writerow([run.experiment, size, seed, name, repr(value)])
    summary = out / f"{run.experiment}_summary.csv"
    with summary.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "size", "metric", "mean", "stderr", "count"])
        for size, name, mean, se, count in run.summary():
            w.writerow([run.experiment, size, name, repr(mean), repr(se), count])
    written += [cells, summary]
    for size in run.sizes:
        seeds = [s for s in run.seeds if (size, s) in run.grids]
        if not seeds:
            continue
        grids = run.grids[(size, seeds[0])]
        for name, G in grids.items():
            stem = f"{run.experiment}_m{size}_seed{seeds[0]}_{name}"
            path = out / f"{stem}.csv"
            np.savetxt(path, G, delimiter=",", fmt="%.10g")
            svg = out / f"{stem}.svg"
            colours = ACTION_COLORS if (name == "policy" and run.experiment == "grid") else None
            svg.write_text(heatmap_svg(G, f"{name} (m={size})", colours))
            written += [path, svg]
    return written
