import math

import numpy as np
import pytest

from rkhsmdp.oracle import TabularMDP


def brute_state_action_gram(X, A, Y, B, bw, kind="delta", action_bw=1.0):
    """Kernel matrix by explicit loops; independent of the vectorised code."""
    X = np.asarray(X, float).reshape(len(X), -1)
    Y = np.asarray(Y, float).reshape(len(Y), -1)
    out = np.zeros((len(X), len(Y)))
    for i in range(len(X)):
        for j in range(len(Y)):
            ks = math.exp(-sum((p - q) ** 2 for p, q in zip(X[i], Y[j])) / (2 * bw * bw))
            if kind == "delta":
                ka = 1.0 if A[i] == B[j] else 0.0
            else:
                ka = math.exp(-(float(A[i]) - float(B[j])) ** 2 / (2 * action_bw**2))
            out[i, j] = ks * ka
    return out


def chain_mdp(gamma=0.9):
    """3 states on a line; action 0 drifts right, action 1 drifts left."""
    right = np.array([[0.3, 0.7, 0.0], [0.0, 0.3, 0.7], [0.0, 0.0, 1.0]])
    left = right[::-1, ::-1].copy()
    r = np.array([[0.0, 0.1], [0.5, 0.0], [1.0, 0.2]])
    return TabularMDP((right, left), r, gamma, np.arange(3.0))


def random_tabular(rng, n=5, k=2, gamma=0.9, denom=10):
    """Random MDP whose probabilities are multiples of 1/denom."""
    P = np.zeros((k, n, n))
    for a in range(k):
        for x in range(n):
            counts = np.bincount(rng.integers(n, size=denom), minlength=n)
            P[a, x] = counts / denom
    return TabularMDP(tuple(P), rng.uniform(0, 1, size=(n, k)), gamma, np.arange(float(n)))


@pytest.fixture
def chain():
    return chain_mdp()
