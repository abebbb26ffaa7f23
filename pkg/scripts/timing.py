"""Scaling measurements: dense sweep cost and low-rank expectation cost."""
import argparse

from rkhsmdp.bench import expectation_timing, loglog_slope, sweep_timing


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sweep-sizes", type=int, nargs="+", default=[250, 500, 1000, 2000])
    p.add_argument("--rank-sizes", type=int, nargs="+", default=[1000, 2000, 4000, 8000])
    p.add_argument("--rank", type=int, default=100)
    args = p.parse_args()
    t = sweep_timing(args.sweep_sizes, action_count=4, sweeps=50, repeats=5)
    for m, s in zip(args.sweep_sizes, t):
        print(f"dense sweep  m={m:<6d} {s * 1e3:9.3f} ms")
    print(f"log-log slope {loglog_slope(args.sweep_sizes, t):.3f} (quadratic is 2)")
    t = expectation_timing(args.rank_sizes, rank=args.rank)
    for m, s in zip(args.rank_sizes, t):
        print(f"rank-{args.rank} expectation m={m:<6d} {s * 1e6:9.3f} us")
    print(f"log-log slope {loglog_slope(args.rank_sizes, t):.3f} (flat is 0)")


if __name__ == "__main__":
    main()
