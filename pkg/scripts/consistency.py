"""Worst-case embedding error on a small random MDP as the sample grows.

The error is the largest RKHS distance between the estimated and true
conditional embeddings over all state-action pairs, with lambda = m^(-1/4).
"""
import argparse

import numpy as np

from rkhsmdp.bench import embedding_error
from rkhsmdp.embedding import fit
from rkhsmdp.environments import tabular_sample
from rkhsmdp.kernels import StateActionKernelConfig
from rkhsmdp.oracle import TabularMDP


def random_mdp(rng, n=10, k=2, gamma=0.9, denom=10):
    """Transition probabilities are multiples of 1/denom."""
    P = np.zeros((k, n, n))
    for a in range(k):
        for x in range(n):
            P[a, x] = np.bincount(rng.integers(n, size=denom), minlength=n) / denom
    return TabularMDP(tuple(P), rng.uniform(0, 1, size=(n, k)), gamma, np.arange(float(n)))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 400, 1600, 6400])
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()
    mdp = random_mdp(np.random.default_rng(2024))
    kernel = StateActionKernelConfig(1.0)
    for m in args.sizes:
        e = [embedding_error(fit(tabular_sample(mdp, m, s), kernel, kernel.state, m ** -0.25), mdp, kernel.state)
             for s in range(args.seeds)]
        print(f"m={m:<6d} error {np.mean(e):.4f} +- {np.std(e, ddof=1) / np.sqrt(len(e)):.4f}")


if __name__ == "__main__":
    main()
