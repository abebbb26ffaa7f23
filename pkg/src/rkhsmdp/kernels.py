"""Gaussian / Kronecker kernels on states and state-action pairs.

The Gaussian convention is ``exp(-||x - y||^2 / (2 sigma^2))``.  Coordinates
listed in ``angular_dims`` live on the circle; their contribution to the
squared distance is the squared chord length ``(2 sin(d/2))^2``, which keeps
the Gram matrix positive semi-definite for every bandwidth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "StateKernelConfig",
    "StateActionKernelConfig",
    "GramMatrix",
    "sq_dists",
    "state_gram",
    "state_action_gram",
    "eval_state_kernel",
    "eval_state_action_kernel",
    "gram",
    "knn_bandwidth",
    "DegenerateDataError",
]


class DegenerateDataError(ValueError):
    """Raised when the data cannot support the requested statistic."""


@dataclass(frozen=True)
class StateKernelConfig:
    bandwidth: float
    angular_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"state bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "angular_dims", tuple(self.angular_dims))


@dataclass(frozen=True)
class StateActionKernelConfig:
    """Product kernel ``L_state(x, x') * k_A(a, a')``.

    ``action_kind`` is ``"delta"`` (discrete action ids compared by identity)
    or ``"gaussian"`` (real-valued actions, bandwidth ``action_bandwidth``).
    """

    state_bandwidth: float
    action_kind: str = "delta"
    action_bandwidth: float = 1.0
    angular_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if not (self.state_bandwidth > 0 and math.isfinite(self.state_bandwidth)):
            raise ValueError(f"state bandwidth must be positive, got {self.state_bandwidth}")
        if self.action_kind not in ("delta", "gaussian"):
            raise ValueError(f"action_kind must be 'delta' or 'gaussian', got {self.action_kind!r}")
        if not (self.action_bandwidth > 0 and math.isfinite(self.action_bandwidth)):
            raise ValueError(f"action bandwidth must be positive, got {self.action_bandwidth}")
        object.__setattr__(self, "angular_dims", tuple(self.angular_dims))

    @property
    def state(self) -> StateKernelConfig:
        return StateKernelConfig(self.state_bandwidth, self.angular_dims)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


def sq_dists(X, Y, angular_dims: Sequence[int] = ()) -> np.ndarray:
    """Pairwise squared distances between rows of ``X`` (n, d) and ``Y`` (k, d)."""
    X = _as_points(X)
    Y = _as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d2 = np.zeros((X.shape[0], Y.shape[0]))
    for j in range(X.shape[1]):
        diff = X[:, j, None] - Y[None, :, j]
        if j in angular_dims:
            diff = 2.0 * np.sin(0.5 * diff)
        d2 += diff * diff
    return d2


def state_gram(X, Y, cfg: StateKernelConfig) -> np.ndarray:
    return np.exp(-sq_dists(X, Y, cfg.angular_dims) / (2.0 * cfg.bandwidth**2))


def _action_factor(A, B, cfg: StateActionKernelConfig) -> np.ndarray:
    A = np.asarray(A)
    B = np.asarray(B)
    if cfg.action_kind == "delta":
        return (A.reshape(-1)[:, None] == B.reshape(-1)[None, :]).astype(float)
    d2 = sq_dists(A.reshape(A.shape[0], -1), B.reshape(B.shape[0], -1))
    return np.exp(-d2 / (2.0 * cfg.action_bandwidth**2))


def state_action_gram(X, A, Y, B, cfg: StateActionKernelConfig) -> np.ndarray:
    """Cross-kernel matrix between pairs ``(X[i], A[i])`` and ``(Y[j], B[j])``."""
    S = state_gram(X, Y, cfg.state)
    return S * _action_factor(A, B, cfg)


def _check_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def eval_state_kernel(x, y, cfg: StateKernelConfig) -> float:
    x, y = _check_vectors(x, y)
    return float(state_gram(x[None, :], y[None, :], cfg)[0, 0])


def eval_state_action_kernel(p, q, cfg: StateActionKernelConfig) -> float:
    """``p`` and ``q`` are ``(state, action)`` tuples."""
    (xp, ap), (xq, aq) = p, q
    xp, xq = _check_vectors(xp, xq)
    ap_arr = np.atleast_1d(np.asarray(ap))
    aq_arr = np.atleast_1d(np.asarray(aq))
    if ap_arr.shape != aq_arr.shape:
        raise ValueError(f"action dimension mismatch: {ap_arr.shape} vs {aq_arr.shape}")
    return float(state_action_gram(xp[None, :], ap_arr[None], xq[None, :], aq_arr[None], cfg)[0, 0])


@dataclass
class GramMatrix:
    matrix: np.ndarray
    states: np.ndarray
    actions: np.ndarray | None = field(default=None)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self) -> bool:
        m = self.matrix.shape[0]
        return self.min_eigenvalue() >= -1e-8 * m


def gram(states, actions, cfg) -> GramMatrix:
    """Gram matrix over the points ``(states[i], actions[i])``.

    With a :class:`StateKernelConfig` the actions are ignored (pass ``None``).
    """
    X = _as_points(states)
    if X.shape[0] == 0:
        raise ValueError("gram needs at least one point")
    if isinstance(cfg, StateKernelConfig):
        K = state_gram(X, X, cfg)
        actions = None
    else:
        A = np.asarray(actions)
        if A.shape[0] != X.shape[0]:
            raise ValueError("states and actions differ in length")
        K = state_action_gram(X, A, X, A, cfg)
    # exact symmetry; entries are computed independently per (i, j)
    K = 0.5 * (K + K.T)
    return GramMatrix(K, X, None if actions is None else np.asarray(actions))


def knn_bandwidth(points, fraction: float = 0.25, angular_dims: Sequence[int] = ()) -> float:
    """Mean distance of each point to its ``ceil(fraction * m)``-th nearest neighbour.

    The point itself is not its own neighbour, but duplicates at distance 0 are.
    """
    X = _as_points(points)
    m = X.shape[0]
    if m < 2:
        raise ValueError("knn_bandwidth needs at least two points")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = min(math.ceil(fraction * m), m - 1)
    d2 = sq_dists(X, X, angular_dims)
    np.fill_diagonal(d2, np.inf)
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    bw = float(np.mean(np.sqrt(np.maximum(kth, 0.0))))
    if not bw > 0:
        raise DegenerateDataError("k-neighbour distances are all zero; bandwidth would be 0")
    return bw
