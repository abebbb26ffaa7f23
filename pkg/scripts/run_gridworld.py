"""Gridworld benchmark: value gap to the exact optimum against sample size.

    python scripts/run_gridworld.py --sizes 1000 5000 --seeds 10 --out-dir results/grid
"""
import argparse

from rkhsmdp.bench import run_experiment1, write_outputs


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--grid-n", type=int, default=50)
    p.add_argument("--out-dir", default="results/grid")
    args = p.parse_args()
    run = run_experiment1(args.sizes, range(args.seeds), grid_n=args.grid_n)
    for size, metric, mean, se, n in run.summary():
        if metric in ("gap", "estimate_error", "bandwidth", "lambda", "iterations"):
            print(f"m={size:<6d} {metric:<16s} {mean:12.5g} +- {se:.3g} (n={n})")
    for path in write_outputs(run, args.out_dir):
        print("wrote", path)


if __name__ == "__main__":
    main()
