"""Pendulum benchmark: control gap and value-prediction error against sample size.

Pass ``--raw`` to repeat the runs with unnormalised weights for comparison.
"""
import argparse
from dataclasses import replace
from pathlib import Path

from rkhsmdp.bench import BenchConfig, run_experiment2, run_value_estimation, write_outputs


def report(run, metrics):
    for size, metric, mean, se, n in run.summary():
        if metric in metrics:
            print(f"  m={size:<5d} {metric:<16s} {mean:12.5g} +- {se:.3g} (n={n})")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400, 800])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--raw", action="store_true", help="also run with unnormalised weights")
    p.add_argument("--out-dir", default="results/pendulum")
    args = p.parse_args()
    variants = [("normalized", BenchConfig())]
    if args.raw:
        variants.append(("raw", replace(BenchConfig(), normalized=False)))
    for name, cfg in variants:
        out = Path(args.out_dir) / name
        print(f"[{name}] control")
        control = run_experiment2(args.sizes, range(args.seeds), cfg)
        report(control, ("gap", "prediction_mean", "lambda", "iterations"))
        print(f"[{name}] value estimation under the reference policy")
        est = run_value_estimation(args.sizes, range(args.seeds), "pendulum", cfg)
        report(est, ("prediction_mean", "prediction_sup"))
        write_outputs(control, out)
        write_outputs(est, out)
        print("wrote", out)


if __name__ == "__main__":
    main()
