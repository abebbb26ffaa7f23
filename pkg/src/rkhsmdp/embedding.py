"""Conditional-distribution embeddings of transition dynamics.

Given transitions ``(x_i, a_i, x'_i)`` the estimated embedding at a query
``(x, a)`` is the expansion ``sum_i alpha_i(x, a) L(x'_i, .)`` with ridge
weights ``alpha(x, a) = (K + lam m I)^{-1} k(x, a)``.  Expectations of a
function ``f`` then reduce to ``sum_i alpha_i f(x'_i)``.

Two fits are provided: :func:`fit` (exact, Cholesky of the regularised Gram
matrix) and :func:`fit_sparse` (pivoted incomplete Cholesky ``K ~ R^T R``).
With a Kronecker action kernel the Gram matrix is block diagonal over action
ids and every operation is done per block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .kernels import (
    StateActionKernelConfig,
    StateKernelConfig,
    state_action_gram,
    state_gram,
)

__all__ = [
    "TransitionSample",
    "WeightVector",
    "UndefinedQueryError",
    "ConditionalEmbedding",
    "DenseEmbedding",
    "LowRankEmbedding",
    "CholeskyFactor",
    "ExpectationOperator",
    "fit",
    "fit_sparse",
    "incomplete_cholesky",
    "l1_normalize",
    "cv_lambda",
    "cv_kernel",
    "cv_folds",
    "default_lambda_grid",
]

_CHUNK = 2048


class UndefinedQueryError(ArithmeticError):
    """All raw weights at a query are zero, so the normalised weights are undefined."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class TransitionSample:
    """``m`` transitions; ``states``/``next_states`` are (m, d), ``actions`` is (m,) or (m, k)."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.states, dtype=float)
        Xp = np.asarray(self.next_states, dtype=float)
        A = np.asarray(self.actions)
        if X.ndim == 1:
            X = X[:, None]
        if Xp.ndim == 1:
            Xp = Xp[:, None]
        if X.shape[0] == 0:
            raise ValueError("a transition sample needs at least one triple")
        if X.shape != Xp.shape:
            raise ValueError(f"states {X.shape} and next states {Xp.shape} disagree")
        if A.shape[0] != X.shape[0]:
            raise ValueError(f"{A.shape[0]} actions for {X.shape[0]} states")
        object.__setattr__(self, "states", X)
        object.__setattr__(self, "next_states", Xp)
        object.__setattr__(self, "actions", A)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return self.m

    def subset(self, idx) -> "TransitionSample":
        return TransitionSample(self.states[idx], self.actions[idx], self.next_states[idx])

    @cached_property
    def _unique(self):
        u, inv = np.unique(self.next_states, axis=0, return_inverse=True)
        return u, inv.reshape(-1)

    @property
    def unique_next_states(self) -> np.ndarray:
        """Distinct next states; duplicates are merged by summing their weights."""
        return self._unique[0]

    @property
    def next_index(self) -> np.ndarray:
        """Index into :attr:`unique_next_states` for every triple."""
        return self._unique[1]

    @cached_property
    def merge_matrix(self) -> sp.csr_matrix:
        """(m, n_unique) indicator; ``alpha @ merge_matrix`` sums duplicate weights."""
        n_u = self.unique_next_states.shape[0]
        return sp.csr_matrix(
            (np.ones(self.m), (np.arange(self.m), self.next_index)), shape=(self.m, n_u)
        )


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    state: np.ndarray
    action: object
    normalized: bool


def l1_normalize(alpha: np.ndarray) -> np.ndarray:
    """Row-wise ``alpha / sum |alpha|``; raises on an all-zero row."""
    alpha = np.asarray(alpha, dtype=float)
    norm = np.abs(alpha).sum(axis=-1, keepdims=True)
    bad = ~(norm > 0)
    if np.any(bad):
        idx = int(np.flatnonzero(bad.reshape(-1))[0])
        raise UndefinedQueryError("raw weights are all zero; normalised weights undefined", idx)
    return alpha / norm


def default_lambda_grid() -> np.ndarray:
    return np.logspace(-6, 0, 10)


def _query_arrays(X, A, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim <= 1:
        X = X.reshape(-1, dim)
    A = np.asarray(A)
    if A.ndim == 0:
        A = np.full(X.shape[0], A.item())
    if A.shape[0] != X.shape[0]:
        raise ValueError(f"{A.shape[0]} actions for {X.shape[0]} query states")
    return X, A


def _blocks(sample: TransitionSample, kernel: StateActionKernelConfig):
    """(key, indices) pairs over which the Gram matrix is block diagonal."""
    if kernel.action_kind == "delta":
        keys = np.unique(sample.actions)
        return [(k.item(), np.flatnonzero(sample.actions == k)) for k in keys]
    return [(None, np.arange(sample.m))]


class CholeskyFactor(NamedTuple):
    R: np.ndarray
    pivots: np.ndarray
    residual_trace: float

    @property
    def rank(self) -> int:
        return self.R.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.rank == 0


def incomplete_cholesky(states, actions, kernel: StateActionKernelConfig, tol: float,
                        max_rank: int | None = None) -> CholeskyFactor:
    """Pivoted partial Cholesky ``K ~ R^T R`` of the state-action Gram matrix.

    Greedy pivoting on the largest residual diagonal; stops once the residual
    trace is ``<= tol`` or ``max_rank`` pivots were taken.  Pivot columns are
    reproduced exactly.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.asarray(actions)
    m = X.shape[0]
    max_rank = m if max_rank is None else min(int(max_rank), m)
    R = np.zeros((min(max_rank, 64), m))  # grown geometrically; the rank is rarely close to m
    d = np.ones(m)  # K(z, z) = 1 for the Gaussian/Kronecker product
    pivots = []
    for j in range(max_rank):
        if d.sum() <= tol:
            break
        p = int(np.argmax(d))
        if d[p] <= 0:
            break
        if j == R.shape[0]:
            R = np.vstack([R, np.zeros((min(R.shape[0], max_rank - j), m))])
        col = state_action_gram(X[p:p + 1], A[p:p + 1], X, A, kernel)[0]
        col -= R[:j, p] @ R[:j]
        R[j] = col / math.sqrt(d[p])
        d -= R[j] ** 2
        d[p] = 0.0
        np.maximum(d, 0.0, out=d)
        pivots.append(p)
    ell = len(pivots)
    return CholeskyFactor(R[:ell].copy(), np.asarray(pivots, dtype=int), float(d.sum()))


class _DenseBlock:
    def __init__(self, key, idx, X, A, kernel, ridge):
        self.key, self.idx = key, idx
        self.X, self.A = X[idx], A[idx]
        K = state_action_gram(self.X, self.A, self.X, self.A, kernel)
        K = 0.5 * (K + K.T)
        K[np.diag_indices_from(K)] += ridge
        self.chol = sla.cho_factor(K, lower=True)

    def raw(self, Xq, Aq, kernel):
        """(n_block, q) raw weights."""
        Kq = state_action_gram(self.X, self.A, Xq, Aq, kernel)
        return sla.cho_solve(self.chol, Kq)


class _LowRankBlock:
    def __init__(self, key, idx, X, A, kernel, ridge, tol, max_rank):
        self.key, self.idx = key, idx
        Xb, Ab = X[idx], A[idx]
        self.factor = incomplete_cholesky(Xb, Ab, kernel, tol, max_rank)
        R, piv = self.factor.R, self.factor.pivots
        self.R = R
        self.Xp, self.Ap = Xb[piv], Ab[piv]
        self.T = R[:, piv]  # upper triangular in pivot order
        ell = R.shape[0]
        inner = ridge * np.eye(ell) + R @ R.T
        self.chol = sla.cho_factor(inner, lower=True) if ell else None

    @property
    def rank(self):
        return self.R.shape[0]

    def coefs(self, Xq, Aq, kernel):
        """(ell, q) coefficients ``beta`` with raw weights ``R^T beta``."""
        if self.rank == 0:
            return np.zeros((0, Xq.shape[0]))
        kP = state_action_gram(self.Xp, self.Ap, Xq, Aq, kernel)
        c = sla.solve_triangular(self.T, kP, trans="T", lower=False)
        return sla.cho_solve(self.chol, c)

    def raw(self, Xq, Aq, kernel):
        return self.R.T @ self.coefs(Xq, Aq, kernel)


class ConditionalEmbedding:
    """Fitted embedding; immutable after construction.

    Subclasses supply per-block raw weights.  All query methods accept a
    single ``(x, a)`` or batches ``(X, A)`` where noted.
    """

    blocks: list

    def __init__(self, sample: TransitionSample, kernel: StateActionKernelConfig,
                 state_kernel: StateKernelConfig | None, lam: float):
        if not (lam > 0 and math.isfinite(lam)):
            raise ValueError(f"lambda must be positive, got {lam}")
        self.sample = sample
        self.kernel = kernel
        self.state_kernel = state_kernel
        self.lam = float(lam)

    @property
    def m(self):
        return self.sample.m

    @property
    def ridge(self):
        return self.lam * self.sample.m

    def _route(self, A):
        """Yield (block, query mask) pairs."""
        for blk in self.blocks:
            if blk.key is None:
                yield blk, slice(None)
            else:
                mask = A == blk.key
                if mask.any():
                    yield blk, mask

    def raw_weight_matrix(self, X, A) -> np.ndarray:
        """(q, m) raw weights for a batch of queries."""
        X, A = _query_arrays(X, A, self.sample.dim)
        out = np.zeros((X.shape[0], self.m))
        for blk, mask in self._route(A):
            out[np.ix_(np.arange(X.shape[0])[mask], blk.idx)] = blk.raw(X[mask], A[mask], self.kernel).T
        return out

    def normalized_weight_matrix(self, X, A) -> np.ndarray:
        return l1_normalize(self.raw_weight_matrix(X, A))

    def raw_weights(self, x, a) -> WeightVector:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        alpha = self.raw_weight_matrix(x[None, :], np.asarray([a]))[0]
        return WeightVector(alpha, x, a, False)

    def normalized_weights(self, x, a) -> WeightVector:
        raw = self.raw_weights(x, a)
        return WeightVector(l1_normalize(raw.values), raw.state, a, True)

    def expect(self, x, a, f_values) -> float:
        """Normalised-embedding expectation of ``f`` given at ``x'_1..x'_m``."""
        f = np.asarray(f_values, dtype=float)
        if f.shape != (self.m,):
            raise ValueError(f"expected {self.m} function values, got shape {f.shape}")
        return float(self.normalized_weights(x, a).values @ f)

    def expectation_operator(self, X, A, normalized: bool = True) -> "ExpectationOperator":
        """Expectations at a fixed query batch, acting on functions given over
        :attr:`TransitionSample.unique_next_states`.  Normalised weights by
        default; ``normalized=False`` uses the raw ridge weights."""
        X, A = _query_arrays(X, A, self.sample.dim)
        merge = self.sample.merge_matrix
        rows = []
        for start in range(0, X.shape[0], _CHUNK):
            sl = slice(start, start + _CHUNK)
            try:
                W = self.raw_weight_matrix(X[sl], A[sl])
                Wn = l1_normalize(W) if normalized else W
            except UndefinedQueryError as err:
                raise UndefinedQueryError(str(err), start + err.index) from None
            rows.append(np.asarray((merge.T @ Wn.T).T))
        return ExpectationOperator(np.vstack(rows))


class ExpectationOperator:
    """Linear map from values on the unique next states to expectations at queries."""

    def __init__(self, matrix):
        self.matrix = matrix

    @property
    def n_queries(self):
        return self.matrix.shape[0]

    def __call__(self, values):
        return self.matrix @ values


class DenseEmbedding(ConditionalEmbedding):
    def __init__(self, sample, kernel, state_kernel, lam):
        super().__init__(sample, kernel, state_kernel, lam)
        X, A = sample.states, sample.actions
        self.blocks = [_DenseBlock(k, idx, X, A, kernel, self.ridge) for k, idx in _blocks(sample, kernel)]

    def weight_matrix(self) -> np.ndarray:
        """Explicit ``W = (K + lam m I)^{-1}``; O(m^3), meant for checks."""
        W = np.zeros((self.m, self.m))
        for blk in self.blocks:
            n = blk.idx.size
            W[np.ix_(blk.idx, blk.idx)] = sla.cho_solve(blk.chol, np.eye(n))
        return 0.5 * (W + W.T)


class PreparedQuery(NamedTuple):
    block: int
    beta: np.ndarray
    norm: float

    def expect(self, projection) -> float:
        """O(ell) expectation against :meth:`LowRankEmbedding.project` output."""
        return float(self.beta @ projection[self.block]) / self.norm


class LowRankEmbedding(ConditionalEmbedding):
    """Embedding through ``K ~ R^T R``.

    Raw weights are ``R^T (lam m I + R R^T)^{-1} c(q)`` where the query column
    is approximated through the pivots, ``c(q) = T^{-T} k_P(q)``.  Following
    the rank-ell inversion identity this equals ``(R^T R + lam m I)^{-1} R^T c(q)``.
    """

    def __init__(self, sample, kernel, state_kernel, lam, tol, max_rank=None):
        super().__init__(sample, kernel, state_kernel, lam)
        X, A = sample.states, sample.actions
        self.tol = tol
        self.blocks = [
            _LowRankBlock(k, idx, X, A, kernel, self.ridge, tol, max_rank)
            for k, idx in _blocks(sample, kernel)
        ]

    @property
    def rank(self) -> int:
        return sum(b.rank for b in self.blocks)

    @property
    def residual_trace(self) -> float:
        return sum(b.factor.residual_trace for b in self.blocks)

    def project(self, f_values) -> list[np.ndarray]:
        """Per-block ``R f``; O(m ell) once per function."""
        f = np.asarray(f_values, dtype=float)
        return [b.R @ f[b.idx] for b in self.blocks]

    def prepare(self, x, a) -> PreparedQuery:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        A = np.asarray([a])
        for i, blk in enumerate(self.blocks):
            if blk.key is None or blk.key == a:
                beta = blk.coefs(x[None, :], A, self.kernel)[:, 0]
                norm = float(np.abs(blk.R.T @ beta).sum())
                if not norm > 0:
                    break
                return PreparedQuery(i, beta, norm)
        raise UndefinedQueryError("raw weights are all zero; normalised weights undefined")

    def expectation_operator(self, X, A, normalized: bool = True) -> "LowRankOperator":
        X, A = _query_arrays(X, A, self.sample.dim)
        q = X.shape[0]
        betas, norm = [], np.zeros(q)
        for blk in self.blocks:
            mask = np.ones(q, bool) if blk.key is None else (A == blk.key)
            beta = np.zeros((q, blk.rank))
            if mask.any() and blk.rank:
                sel = np.flatnonzero(mask)
                for start in range(0, sel.size, _CHUNK):
                    s = sel[start:start + _CHUNK]
                    b = blk.coefs(X[s], A[s], self.kernel).T
                    beta[s] = b
                    norm[s] += np.abs(b @ blk.R).sum(axis=1)
            betas.append(beta)
        if not normalized:
            return LowRankOperator(self, betas, np.ones(q))
        bad = ~(norm > 0)
        if bad.any():
            raise UndefinedQueryError(
                "raw weights are all zero; normalised weights undefined", int(np.flatnonzero(bad)[0]))
        return LowRankOperator(self, betas, norm)


class LowRankOperator:
    """Low-rank counterpart of :class:`ExpectationOperator`: O(m ell) projection
    per call, then O(ell) per query."""

    def __init__(self, emb: LowRankEmbedding, betas, norm):
        self.emb = emb
        self.betas = [b / norm[:, None] for b in betas]
        self.norm = norm

    @property
    def n_queries(self):
        return self.norm.shape[0]

    def __call__(self, values):
        f = np.asarray(values)[self.emb.sample.next_index]
        proj = self.emb.project(f)
        out = np.zeros(self.n_queries)
        for beta, p in zip(self.betas, proj):
            out += beta @ p
        return out


def fit(sample: TransitionSample, kernel: StateActionKernelConfig,
        state_kernel: StateKernelConfig | None, lam: float) -> DenseEmbedding:
    return DenseEmbedding(sample, kernel, state_kernel, lam)


def fit_sparse(sample: TransitionSample, kernel: StateActionKernelConfig,
               state_kernel: StateKernelConfig | None, lam: float, tol: float = 1e-6,
               max_rank: int | None = None) -> LowRankEmbedding:
    return LowRankEmbedding(sample, kernel, state_kernel, lam, tol, max_rank)


# -- cross-validation of the regulariser -------------------------------------

def cv_folds(m: int, folds: int, rng_seed) -> list[np.ndarray]:
    """Held-out index sets: a seeded permutation split into ``folds`` chunks."""
    perm = np.random.default_rng(rng_seed).permutation(m)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cv_lambda(sample: TransitionSample, kernel: StateActionKernelConfig,
              state_kernel: StateKernelConfig, lam_grid: Sequence[float] | None = None,
              folds: int = 5, rng_seed=0) -> tuple[float, np.ndarray]:
    """K-fold selection of ``lam`` for the vector-valued ridge objective.

    The held-out loss of a triple is ``||L(x'_i, .) - mu(x_i, a_i)||_L^2``
    with the raw (unnormalised) embedding fitted on the remaining folds.
    Returns the minimiser (ties go to the larger ``lam``) and the total loss
    per grid value.
    """
    grid = np.asarray(default_lambda_grid() if lam_grid is None else lam_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(~(grid > 0)):
        raise ValueError("lambda grid values must be positive")
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if folds > sample.m:
        raise ValueError(f"{folds} folds for {sample.m} samples")
    losses = np.zeros(grid.size)
    for held in cv_folds(sample.m, folds, rng_seed):
        train = np.setdiff1d(np.arange(sample.m), held, assume_unique=True)
        losses += _fold_losses(sample.subset(train), sample.subset(held), kernel, state_kernel, grid)
    best = losses.min()
    lam_star = float(grid[losses == best].max())
    return lam_star, losses


def _fold_losses(train, held, kernel, state_kernel, grid):
    """Total held-out loss per lambda; one eigendecomposition per block."""
    n_tr = train.m
    out = np.full(grid.size, float(held.m))  # L(x', x') = 1 for each held-out triple
    for key, idx in _blocks(train, kernel):
        hmask = np.ones(held.m, bool) if key is None else (held.actions == key)
        if not hmask.any():
            continue
        Xt, At, Xpt = train.states[idx], train.actions[idx], train.next_states[idx]
        Xh, Ah, Xph = held.states[hmask], held.actions[hmask], held.next_states[hmask]
        K = state_action_gram(Xt, At, Xt, At, kernel)
        s, U = np.linalg.eigh(0.5 * (K + K.T))
        B = U.T @ state_action_gram(Xt, At, Xh, Ah, kernel)
        Ltt = state_gram(Xpt, Xpt, state_kernel)
        Lth = state_gram(Xpt, Xph, state_kernel)
        for g, lam in enumerate(grid):
            alpha = U @ (B / (s + lam * n_tr)[:, None])
            out[g] += -2.0 * np.sum(alpha * Lth) + np.sum(alpha * (Ltt @ alpha))
    return out


def cv_kernel(sample: TransitionSample, kernels: Sequence[StateActionKernelConfig],
              state_kernel: StateKernelConfig, lam_grid: Sequence[float] | None = None,
              folds: int = 5, rng_seed=0) -> tuple[StateActionKernelConfig, float, np.ndarray]:
    """Joint choice of input kernel and ``lam``.

    Losses are comparable across candidates only because the output kernel
    stays fixed.  Returns the winner, its ``lam`` and the (kernels, lambdas)
    loss table; ties keep the earlier candidate.
    """
    if not kernels:
        raise ValueError("no candidate kernels")
    table, lams = [], []
    for k in kernels:
        lam, losses = cv_lambda(sample, k, state_kernel, lam_grid, folds, rng_seed)
        table.append(losses)
        lams.append(lam)
    table = np.vstack(table)
    best = int(np.argmin(table.min(axis=1)))
    return kernels[best], lams[best], table
