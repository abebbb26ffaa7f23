"""Dynamic programming with embedded expectations.

Value vectors live on the distinct sampled next states; expectations at
``(x'_i, a)`` come from the fitted embedding's weights (normalised unless the
config asks for raw ones) with duplicate next states merged.  Sweeps are synchronous and start from ``V = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embedding import ConditionalEmbedding, UndefinedQueryError

__all__ = [
    "PlannerConfig",
    "ValueEstimate",
    "GreedyPolicy",
    "PlanningError",
    "evaluate_policy",
    "value_iteration",
    "q_value",
    "greedy_action",
    "contraction_check",
    "convergence_trace",
    "bellman_operator",
]

# reward(states (n, d), action) -> (n,)
Reward = Callable[[np.ndarray, object], np.ndarray]
# policy(states (n, d)) -> (n,) actions
PolicyFn = Callable[[np.ndarray], np.ndarray]


class PlanningError(RuntimeError):
    """The embedding is undefined at one of the planner's sample queries."""

    def __init__(self, message, sample_index=None, action=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.action = action


@dataclass(frozen=True)
class PlannerConfig:
    gamma: float
    actions: tuple
    max_iters: int = 1000
    threshold: float = 1e-6
    # raw ridge weights are not a sup-norm contraction; kept for comparison runs
    normalized: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("need at least one action")


def _states(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == dim
    return x.reshape(-1, dim), single


@dataclass
class ValueEstimate:
    """Result of a planning run.

    ``unique_values`` are over ``emb.sample.unique_next_states``; ``values``
    expands them to the ``m`` sampled next states.  ``policy`` is ``None`` for
    value iteration (maximise over actions) or the evaluated policy.
    """

    unique_values: np.ndarray
    emb: ConditionalEmbedding
    reward: Reward
    gamma: float
    actions: tuple
    iterations: int
    final_error: float
    policy: PolicyFn | None = None
    normalized: bool = True
    history: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.unique_values[self.emb.sample.next_index]

    def q_values(self, x) -> np.ndarray:
        """(n, |A|) table of ``r(x, a) + gamma * E_(x,a)[V]``."""
        X, _ = _states(x, self.emb.sample.dim)
        Q = np.empty((X.shape[0], len(self.actions)))
        for j, a in enumerate(self.actions):
            Q[:, j] = _q_column(self, X, a)
        return Q

    def __call__(self, x):
        """Extrapolated value at one state or a batch of states."""
        X, single = _states(x, self.emb.sample.dim)
        if self.policy is None:
            out = self.q_values(X).max(axis=1)
        else:
            acts = np.asarray(self.policy(X))
            out = np.empty(X.shape[0])
            for a in _distinct(acts):
                mask = acts == a
                out[mask] = _q_column(self, X[mask], a)
        return float(out[0]) if single else out


def _distinct(acts):
    return list(dict.fromkeys(np.asarray(acts).tolist()))


def _q_column(est: ValueEstimate, X, a):
    r = np.asarray(est.reward(X, a), dtype=float)
    if est.gamma == 0:
        return r.copy()
    op = est.emb.expectation_operator(X, np.full(X.shape[0], a, dtype=np.asarray(est.actions).dtype),
                                      normalized=est.normalized)
    return r + est.gamma * op(est.unique_values)


def q_value(est: ValueEstimate, x, a) -> float:
    X, _ = _states(x, est.emb.sample.dim)
    return float(_q_column(est, X, a)[0])


@dataclass
class GreedyPolicy:
    """Acts greedily on the estimate's Q-values; ties go to the lowest action index."""

    estimate: ValueEstimate

    @property
    def actions(self):
        return self.estimate.actions

    def action_indices(self, x) -> np.ndarray:
        return np.argmax(self.estimate.q_values(x), axis=1)

    def __call__(self, x):
        X, single = _states(x, self.estimate.emb.sample.dim)
        acts = np.asarray(self.actions)[self.action_indices(X)]
        return acts[0] if single else acts


def greedy_action(policy: GreedyPolicy, x):
    return policy(x)


class _Sweep:
    """Precomputed pieces of one synchronous sweep over the unique next states."""

    def __init__(self, emb, reward, actions, gamma, policy=None, normalized=True):
        self.gamma = gamma
        U = emb.sample.unique_next_states
        act_dtype = np.asarray(actions).dtype
        if policy is None:
            pairs = [(a, np.arange(U.shape[0])) for a in actions]
        else:
            chosen = np.asarray(policy(U))
            pairs = [(a, np.flatnonzero(chosen == a)) for a in _distinct(chosen)]
        self.n = U.shape[0]
        self.parts = []
        for a, rows in pairs:
            r = np.asarray(reward(U[rows], a), dtype=float)
            op = None
            if gamma > 0 and rows.size:
                try:
                    op = emb.expectation_operator(U[rows], np.full(rows.size, a, dtype=act_dtype),
                                                  normalized=normalized)
                except UndefinedQueryError as err:
                    u = rows[err.index]
                    i = int(np.flatnonzero(emb.sample.next_index == u)[0])
                    raise PlanningError(
                        f"embedding undefined at sample {i} (next state {U[u].tolist()}, action {a!r})",
                        sample_index=i, action=a) from err
            self.parts.append((rows, r, op))
        self.maximise = policy is None

    def __call__(self, V):
        if self.maximise:
            out = np.full(self.n, -np.inf)
            for rows, r, op in self.parts:
                np.maximum(out, r if op is None else r + self.gamma * op(V), out=out)
            return out
        out = np.empty(self.n)
        for rows, r, op in self.parts:
            out[rows] = r if op is None else r + self.gamma * op(V)
        return out


def bellman_operator(emb, reward: Reward, cfg: PlannerConfig, policy: PolicyFn | None = None):
    """The one-sweep map on value vectors over the unique next states."""
    return _Sweep(emb, reward, cfg.actions, cfg.gamma, policy, cfg.normalized)


def _iterate(sweep: _Sweep, cfg: PlannerConfig, record_history: bool):
    V = np.zeros(sweep.n)
    history = [V] if record_history else None
    n, error = 1, math.inf
    while n <= cfg.max_iters and error > cfg.threshold:
        V_new = sweep(V)
        error = float(np.max(np.abs(V_new - V))) if V.size else 0.0
        V = V_new
        if record_history:
            history.append(V)
        n += 1
        if cfg.gamma == 0:
            break  # the first sweep is already the fixed point
    return V, n - 1, error, history


def evaluate_policy(emb: ConditionalEmbedding, policy: PolicyFn, reward: Reward,
                    cfg: PlannerConfig, record_history: bool = False) -> ValueEstimate:
    """Policy evaluation with embedded expectations at ``(x'_i, pi(x'_i))``."""
    sweep = _Sweep(emb, reward, cfg.actions, cfg.gamma, policy, cfg.normalized)
    V, iters, err, hist = _iterate(sweep, cfg, record_history)
    return ValueEstimate(V, emb, reward, cfg.gamma, cfg.actions, iters, err, policy, cfg.normalized, hist)


def value_iteration(emb: ConditionalEmbedding, reward: Reward, cfg: PlannerConfig,
                    record_history: bool = False) -> ValueEstimate:
    """Approximate value iteration; per sweep O(m^2 |A|) on the dense path."""
    sweep = _Sweep(emb, reward, cfg.actions, cfg.gamma, None, cfg.normalized)
    V, iters, err, hist = _iterate(sweep, cfg, record_history)
    return ValueEstimate(V, emb, reward, cfg.gamma, cfg.actions, iters, err, None, cfg.normalized, hist)


def contraction_check(emb: ConditionalEmbedding, reward: Reward, cfg: PlannerConfig,
                      trials: int = 100, rng_seed=0, scale: float = 1.0) -> float:
    """Largest observed ``||BV - BU||_inf / ||V - U||_inf`` over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sweep = _Sweep(emb, reward, cfg.actions, cfg.gamma, None, cfg.normalized)
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(trials):
        U = rng.normal(scale=scale, size=sweep.n)
        V = rng.normal(scale=scale, size=sweep.n)
        den = np.max(np.abs(V - U))
        if den == 0:
            continue
        worst = max(worst, float(np.max(np.abs(sweep(V) - sweep(U))) / den))
    return worst


def convergence_trace(history: Sequence[np.ndarray]) -> np.ndarray:
    """Per-sweep residuals ``e_k = ||V_{k+1} - V_k||_inf``."""
    if len(history) < 2:
        raise ValueError("need at least two recorded iterates")
    H = [np.asarray(v, dtype=float) for v in history]
    return np.array([np.max(np.abs(b - a)) if a.size else 0.0 for a, b in zip(H[:-1], H[1:])])
