"""Reference environments: a noisy gridworld room and the pendulum swing-up."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .embedding import TransitionSample
from .oracle import TabularMDP, exact_policy_value, exact_value_iteration

__all__ = [
    "GridworldSpec",
    "GRID_MOVES",
    "gridworld_mdp",
    "gridworld_reward",
    "tabular_sample",
    "gridworld_sample",
    "exhaustive_sample",
    "PendulumSpec",
    "pendulum_step",
    "pendulum_reward",
    "pendulum_torques",
    "pendulum_sample",
    "pendulum_policy_sample",
    "PendulumReference",
    "pendulum_reference_value",
    "evaluation_grid",
]

# north, east, south, west as (dx, dy); state index = x * n + y
GRID_MOVES = np.array([[0, 1], [1, 0], [0, -1], [-1, 0]])


@dataclass(frozen=True)
class GridworldSpec:
    n: int = 50
    reward_bandwidth: float | None = None  # defaults to n / 10
    success: float = 0.8
    gamma: float = 0.9

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid side must be >= 2")
        if not 0 < self.success <= 1:
            raise ValueError("success probability must lie in (0, 1]")
        if self.reward_bandwidth is not None and not self.reward_bandwidth > 0:
            raise ValueError("reward bandwidth must be positive")

    @property
    def sigma_r(self) -> float:
        return self.n / 10 if self.reward_bandwidth is None else self.reward_bandwidth

    @property
    def center(self) -> np.ndarray:
        c = (self.n - 1) / 2
        return np.array([c, c])

    @cached_property
    def coords(self) -> np.ndarray:
        """(n^2, 2) cell coordinates; state index = x * n + y."""
        x, y = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="ij")
        return np.column_stack([x.ravel(), y.ravel()]).astype(float)


def gridworld_reward(spec: GridworldSpec, states) -> np.ndarray:
    X = np.asarray(states, dtype=float).reshape(-1, 2)
    d2 = np.sum((X - spec.center) ** 2, axis=1)
    return np.exp(-d2 / (2 * spec.sigma_r**2))


def gridworld_mdp(spec: GridworldSpec) -> TabularMDP:
    """Intended move with prob ``success``, otherwise a uniformly random
    direction (which may coincide with the intended one); walls block."""
    n = spec.n
    C = spec.coords.astype(int)
    idx = np.arange(n * n)
    dest = []
    for mv in GRID_MOVES:
        nxt = C + mv
        ok = np.all((nxt >= 0) & (nxt < n), axis=1)
        dest.append(np.where(ok, nxt[:, 0] * n + nxt[:, 1], idx))
    noise = (1 - spec.success) / 4
    P = []
    for a in range(4):
        rows, cols, vals = [], [], []
        for d in range(4):
            rows.append(idx)
            cols.append(dest[d])
            vals.append(np.full(n * n, noise + (spec.success if d == a else 0.0)))
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n * n, n * n)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        P.append(m)
    r = np.repeat(gridworld_reward(spec, spec.coords)[:, None], 4, axis=1)
    return TabularMDP(tuple(P), r, spec.gamma, spec.coords)


def _rows(p, states):
    sub = p[states]
    return sub.toarray() if sp.issparse(sub) else np.asarray(sub)


def tabular_sample(mdp: TabularMDP, m: int, rng_seed, policy=None) -> TransitionSample:
    """``m`` triples with ``x`` uniform, ``a`` uniform (or ``policy[x]`` when a
    per-state action array is given) and ``x' ~ P(.|x, a)``; states as coordinates."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(rng_seed)
    x = rng.integers(mdp.n_states, size=m)
    a = rng.integers(mdp.n_actions, size=m)
    if policy is not None:
        a = np.asarray(policy, dtype=int)[x]
    u = rng.random(m)
    xp = np.empty(m, dtype=int)
    for act in range(mdp.n_actions):
        sel = np.flatnonzero(a == act)
        if sel.size:
            cdf = np.cumsum(_rows(mdp.P[act], x[sel]), axis=1)
            xp[sel] = np.minimum((cdf <= u[sel, None] * cdf[:, -1:]).sum(axis=1), mdp.n_states - 1)
    return TransitionSample(mdp.coords[x], a, mdp.coords[xp])


def gridworld_sample(mdp: TabularMDP, m: int, rng_seed) -> TransitionSample:
    return tabular_sample(mdp, m, rng_seed)


def exhaustive_sample(mdp: TabularMDP, per_pair: int) -> TransitionSample:
    """Every ``(x, a)`` exactly ``per_pair`` times with next-state counts
    ``per_pair * P(x'|x, a)``, so empirical frequencies equal the true ones.

    Raises if ``per_pair * P`` is not integral (to 1e-9).
    """
    X, A, XP = [], [], []
    for a in range(mdp.n_actions):
        P = mdp.P[a].toarray() if sp.issparse(mdp.P[a]) else mdp.P[a]
        counts = P * per_pair
        rounded = np.rint(counts)
        if np.max(np.abs(counts - rounded)) > 1e-9:
            raise ValueError(f"per_pair={per_pair} does not give integral counts for action {a}")
        xs, xps = np.nonzero(rounded)
        reps = rounded[xs, xps].astype(int)
        X.append(np.repeat(xs, reps))
        XP.append(np.repeat(xps, reps))
        A.append(np.full(reps.sum(), a))
    x, a, xp = np.concatenate(X), np.concatenate(A), np.concatenate(XP)
    order = np.lexsort((xp, a, x))
    return TransitionSample(mdp.coords[x[order]], a[order], mdp.coords[xp[order]])


# -- pendulum -----------------------------------------------------------------

@dataclass(frozen=True)
class PendulumSpec:
    """Angle measured from upright; Euler-discretised dynamics."""

    dt: float = 0.1
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    friction: float = 0.05
    max_torque: float = 5.0
    max_speed: float = 7.0
    gamma: float = 0.95

    def __post_init__(self):
        for name in ("dt", "mass", "length", "gravity", "max_torque", "max_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")


def _wrap(theta):
    return (theta + np.pi) % (2 * np.pi) - np.pi


def pendulum_step(state, torque, spec: PendulumSpec = PendulumSpec(), dt: float | None = None):
    """One explicit Euler step; accepts a single ``(theta, omega)`` or (n, 2) batches."""
    s = np.asarray(state, dtype=float)
    u = np.asarray(torque, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
        raise ValueError("pendulum state and torque must be finite")
    h = spec.dt if dt is None else dt
    th, om = s[..., 0], s[..., 1]
    u = np.clip(u, -spec.max_torque, spec.max_torque)
    ml2 = spec.mass * spec.length**2
    acc = (u - spec.friction * om + spec.mass * spec.gravity * spec.length * np.sin(th)) / ml2
    th_new = th + h * om
    om_new = om + h * acc
    # keep pi as pi instead of mapping it to -pi
    wrapped = np.where(np.abs(th_new) <= np.pi, th_new, _wrap(th_new))
    return np.stack([wrapped, np.clip(om_new, -spec.max_speed, spec.max_speed)], axis=-1)


def pendulum_reward(theta, omega=None):
    """``exp(-theta^2 - 0.2 omega^2)``; also accepts (n, 2) states as one argument."""
    if omega is None:
        s = np.asarray(theta, dtype=float)
        theta, omega = s[..., 0], s[..., 1]
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return np.exp(-theta**2 - 0.2 * omega**2)


def pendulum_torques(spec: PendulumSpec = PendulumSpec(), action_count: int = 25) -> np.ndarray:
    if action_count < 1:
        raise ValueError("action_count must be >= 1")
    if action_count == 1:
        return np.zeros(1)
    return np.linspace(-spec.max_torque, spec.max_torque, action_count)


def _uniform_states(rng, m, spec):
    th = rng.uniform(-np.pi, np.pi, m)
    om = rng.uniform(-spec.max_speed, spec.max_speed, m)
    return np.column_stack([th, om])


def pendulum_sample(spec: PendulumSpec, m: int, action_count: int = 25, rng_seed=0) -> TransitionSample:
    """States uniform over the domain, torques uniform over the action grid."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(rng_seed)
    X = _uniform_states(rng, m, spec)
    U = pendulum_torques(spec, action_count)[rng.integers(action_count, size=m)]
    return TransitionSample(X, U, pendulum_step(X, U, spec))


def pendulum_policy_sample(spec: PendulumSpec, m: int, policy, rng_seed=0) -> TransitionSample:
    """Uniform states, torques chosen by ``policy(states) -> torques``."""
    rng = np.random.default_rng(rng_seed)
    X = _uniform_states(rng, m, spec)
    U = np.asarray(policy(X), dtype=float)
    return TransitionSample(X, U, pendulum_step(X, U, spec))


def evaluation_grid(spec: PendulumSpec = PendulumSpec(), points: int = 25) -> np.ndarray:
    """(points^2, 2) evenly spaced states covering the whole domain."""
    th = np.linspace(-np.pi, np.pi, points)
    om = np.linspace(-spec.max_speed, spec.max_speed, points)
    T, O = np.meshgrid(th, om, indexing="ij")
    return np.column_stack([T.ravel(), O.ravel()])


@dataclass
class PendulumReference:
    """Exact DP on a fine state grid with next states snapped to the nearest cell."""

    spec: PendulumSpec
    resolution: int
    torques: np.ndarray
    mdp: TabularMDP
    values: np.ndarray  # (resolution^2,)
    policy: np.ndarray  # torque indices, (resolution^2,)

    @property
    def states(self) -> np.ndarray:
        return self.mdp.coords

    def cell(self, states) -> np.ndarray:
        return _snap(np.asarray(states, dtype=float).reshape(-1, 2), self.spec, self.resolution)

    def value_at(self, states) -> np.ndarray:
        return self.values[self.cell(states)]

    def torque_at(self, states) -> np.ndarray:
        return self.torques[self.policy[self.cell(states)]]

    def policy_value(self, torque_index) -> np.ndarray:
        """Exact value on the grid of a policy given as torque indices per cell."""
        return exact_policy_value(self.mdp, torque_index)

    def readout(self, values=None, points: int = 25) -> np.ndarray:
        v = self.values if values is None else values
        return v[self.cell(evaluation_grid(self.spec, points))]


def _snap(X, spec, res):
    dth = 2 * np.pi / (res - 1)
    dom = 2 * spec.max_speed / (res - 1)
    i = np.clip(np.rint((X[:, 0] + np.pi) / dth), 0, res - 1).astype(int)
    j = np.clip(np.rint((X[:, 1] + spec.max_speed) / dom), 0, res - 1).astype(int)
    return i * res + j


def pendulum_reference_value(spec: PendulumSpec = PendulumSpec(), grid_resolution: int = 97,
                             gamma: float | None = None, action_count: int = 25,
                             tol: float = 1e-8) -> PendulumReference:
    """Reference optimal values from deterministic dynamics on a fine grid."""
    if grid_resolution < 25:
        raise ValueError("grid_resolution must be >= 25")
    g = spec.gamma if gamma is None else gamma
    res = grid_resolution
    states = evaluation_grid(spec, res)
    n = states.shape[0]
    torques = pendulum_torques(spec, action_count)
    P = []
    for u in torques:
        nxt = _snap(pendulum_step(states, np.full(n, u), spec), spec, res)
        P.append(sp.csr_matrix((np.ones(n), (np.arange(n), nxt)), shape=(n, n)))
    r = np.repeat(pendulum_reward(states)[:, None], len(torques), axis=1)
    mdp = TabularMDP(tuple(P), r, g, states)
    V, pi = exact_value_iteration(mdp, tol)
    return PendulumReference(spec, res, torques, mdp, V, pi)
