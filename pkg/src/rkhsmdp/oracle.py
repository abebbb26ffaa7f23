"""Exact dynamic programming on finite MDPs with known transitions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "TabularMDP",
    "bellman",
    "exact_value_iteration",
    "exact_policy_value",
    "q_star",
    "greedy",
    "lemma11_gap",
]


@dataclass(frozen=True)
class TabularMDP:
    """``P[a]`` is an (n, n) row-stochastic matrix (dense or scipy sparse),
    ``r`` is the (n, |A|) reward table.  ``coords`` (n, d) places states in
    space for kernels; defaults to the state index."""

    P: tuple
    r: np.ndarray
    gamma: float
    coords: np.ndarray | None = None

    def __post_init__(self):
        P = tuple(p.tocsr() if sp.issparse(p) else np.asarray(p, dtype=float) for p in self.P)
        r = np.asarray(self.r, dtype=float)
        n = r.shape[0]
        if r.ndim != 2 or r.shape[1] != len(P):
            raise ValueError(f"reward table {r.shape} does not match {len(P)} actions")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for a, p in enumerate(P):
            if p.shape != (n, n):
                raise ValueError(f"P[{a}] has shape {p.shape}, expected {(n, n)}")
            vals = p.data if sp.issparse(p) else p
            if np.any(vals < 0):
                raise ValueError(f"P[{a}] has negative entries")
            rows = np.asarray(p.sum(axis=1)).reshape(-1)
            if np.max(np.abs(rows - 1.0)) > 1e-12:
                raise ValueError(f"rows of P[{a}] do not sum to 1")
        coords = np.arange(n, dtype=float)[:, None] if self.coords is None else np.asarray(self.coords, float)
        if coords.ndim == 1:
            coords = coords[:, None]
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "coords", coords)

    @property
    def n_states(self) -> int:
        return self.r.shape[0]

    @property
    def n_actions(self) -> int:
        return self.r.shape[1]

    def dense_P(self) -> np.ndarray:
        """(|A|, n, n) transition tensor."""
        return np.stack([p.toarray() if sp.issparse(p) else p for p in self.P])

    def expectations(self, V) -> np.ndarray:
        """(n, |A|) table of ``E_{X ~ P(.|x, a)}[V(X)]``."""
        return np.column_stack([p @ V for p in self.P])

    def with_gamma(self, gamma) -> "TabularMDP":
        return TabularMDP(self.P, self.r, gamma, self.coords)


def bellman(mdp: TabularMDP, V) -> np.ndarray:
    return (mdp.r + mdp.gamma * mdp.expectations(V)).max(axis=1)


def greedy(Q) -> np.ndarray:
    """Row-wise argmax, lowest index on ties."""
    return np.argmax(np.asarray(Q), axis=1)


def q_star(mdp: TabularMDP, V) -> np.ndarray:
    return mdp.r + mdp.gamma * mdp.expectations(np.asarray(V, dtype=float))


def exact_value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iters: int = 1_000_000):
    """Iterate the Bellman operator until ``||V - V*||_inf <= tol`` is guaranteed.

    Returns ``(V*, pi*)`` with ``pi*`` greedy on ``Q*``.
    """
    g = mdp.gamma
    stop = math.inf if g == 0 else tol * (1 - g) / g
    V = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        V_new = bellman(mdp, V)
        done = np.max(np.abs(V_new - V)) <= stop
        V = V_new
        if done:
            break
    else:
        raise RuntimeError("exact value iteration did not converge")
    return V, greedy(q_star(mdp, V))


def _policy_matrix(mdp: TabularMDP, pi):
    pi = np.asarray(pi, dtype=int)
    n = mdp.n_states
    if pi.shape != (n,):
        raise ValueError(f"policy must give one action per state, got shape {pi.shape}")
    if any(sp.issparse(p) for p in mdp.P):
        rows = []
        for a, p in enumerate(mdp.P):
            mask = sp.diags((pi == a).astype(float))
            rows.append(mask @ sp.csr_matrix(p))
        return sum(rows[1:], rows[0]).tocsr()
    return np.stack(mdp.P)[pi, np.arange(n), :]


def exact_policy_value(mdp: TabularMDP, pi) -> np.ndarray:
    """Solve ``(I - gamma P^pi) V = r^pi``."""
    pi = np.asarray(pi, dtype=int)
    n = mdp.n_states
    r_pi = mdp.r[np.arange(n), pi]
    P_pi = _policy_matrix(mdp, pi)
    if sp.issparse(P_pi):
        A = sp.identity(n, format="csc") - mdp.gamma * P_pi.tocsc()
        return np.asarray(spla.spsolve(A, r_pi)).reshape(-1)
    return np.linalg.solve(np.eye(n) - mdp.gamma * P_pi, r_pi)


def lemma11_gap(mdp: TabularMDP, Q, V_star=None, tol: float = 1e-12) -> tuple[float, float]:
    """``(||V^{pi_Q} - V*||_inf, 2/(1-gamma) ||Q* - Q||_inf)`` computed exactly."""
    Q = np.asarray(Q, dtype=float)
    if V_star is None:
        V_star, pi_star = exact_value_iteration(mdp, tol)
        V_star = exact_policy_value(mdp, pi_star)
    Qs = q_star(mdp, V_star)
    lhs = float(np.max(np.abs(exact_policy_value(mdp, greedy(Q)) - V_star)))
    rhs = 2.0 / (1.0 - mdp.gamma) * float(np.max(np.abs(Qs - Q)))
    return lhs, rhs
