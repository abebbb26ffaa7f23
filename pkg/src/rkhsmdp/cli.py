"""``rkhsmdp`` command line.

Exit codes: 0 success, 2 usage/configuration/data-format error, 3 I/O error,
4 numerical or domain failure (for instance an undefined embedding query).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench
from .config import ConfigError, RunConfig, render_defaults
from .embedding import UndefinedQueryError, cv_kernel, cv_lambda, fit, fit_sparse
from .environments import (
    evaluation_grid,
    exhaustive_sample,
    gridworld_mdp,
    gridworld_reward,
    gridworld_sample,
    pendulum_reference_value,
    pendulum_reward,
    pendulum_sample,
)
from .files import (
    DataFormatError,
    read_policy_csv,
    read_sample_csv,
    write_policy_csv,
    write_sample_csv,
    write_values_csv,
)
from .kernels import DegenerateDataError, StateActionKernelConfig, StateKernelConfig, knn_bandwidth, sq_dists
from .oracle import exact_policy_value, exact_value_iteration
from .planner import GreedyPolicy, PlannerConfig, PlanningError, evaluate_policy, value_iteration

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
EXPERIMENTS = ("grid", "pendulum", "value-estimation")


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--seed", type=int, default=0, help="single source of randomness (default 0)")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread cap (default: all cores)")

    p = argparse.ArgumentParser(prog="rkhsmdp", description="Planning with RKHS embeddings of MDP dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw transitions and write them as CSV")
    s.add_argument("--env", help="gridworld or pendulum (default: env.name)")
    s.add_argument("--m", type=int, help="number of transitions")
    s.add_argument("--exhaustive", type=int, metavar="PER_PAIR",
                   help="gridworld only: every (x, a) PER_PAIR times with exact next-state frequencies")
    s.add_argument("--out", type=Path, required=True)

    for name, text in (("plan", "value iteration and greedy policy"), ("eval", "evaluate a given policy")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--data", type=Path, required=True, help="transition CSV")
        q.add_argument("--out", type=Path, required=True, help="output directory")
        if name == "eval":
            q.add_argument("--policy", type=Path, required=True, help="policy CSV (x_0..x_{d-1},a)")

    b = sub.add_parser("bench", parents=[common], help="run an experiment over sizes and seeds")
    b.add_argument("--experiment", required=True, help=" | ".join(EXPERIMENTS))
    b.add_argument("--out-dir", type=Path, required=True)

    sub.add_parser("defaults", help="print every configuration key with its default")
    return p


def _config(args) -> RunConfig:
    if getattr(args, "config", None) is None:
        return RunConfig()
    return RunConfig.load(args.config)


def _reward(cfg: RunConfig):
    if cfg.env == "gridworld":
        spec = cfg.grid_spec()
        return lambda X, a: gridworld_reward(spec, X)
    return lambda X, a: pendulum_reward(X)


def _eval_states(cfg: RunConfig):
    if cfg.env == "gridworld":
        n = cfg.grid_spec().n
        return gridworld_mdp(cfg.grid_spec()).coords, (n, n)
    p = cfg["env.eval_points"]
    return evaluation_grid(cfg.pendulum_spec(), p), (p, p)


def _embedding(cfg: RunConfig, sample, seed):
    """Kernel choice, regulariser and fit as the configuration asks."""
    kind, ang = cfg.action_kind(), cfg.angular_dims()
    heuristic = cfg.heuristic()
    lam = cfg["cv.lambda"]
    lam_grid, folds = cfg.lam_grid(), cfg["cv.folds"]
    if heuristic == "cv":
        out = StateKernelConfig(cfg["kernel.output_bandwidth"], ang)
        cands = [StateActionKernelConfig(bw, kind, cfg["kernel.action_bandwidth"], ang)
                 for bw in cfg["kernel.bandwidth_candidates"]]
        if lam == "auto":
            kernel, lam, _ = cv_kernel(sample, cands, out, lam_grid, folds, seed)
        else:
            kernel = cands[0] if len(cands) == 1 else cv_kernel(sample, cands, out, (lam,), folds, seed)[0]
    else:
        if heuristic == "fixed":
            kernel = cfg.fixed_kernel()
        else:
            pts = sample.states if kind == "delta" else np.column_stack([sample.states, sample.actions])
            bw = knn_bandwidth(pts, cfg["kernel.knn_fraction"], ang)
            kernel = StateActionKernelConfig(bw, kind, bw, ang)
        out = kernel.state
        if lam == "auto":
            lam, _ = cv_lambda(sample, kernel, out, lam_grid, folds, seed)
    if cfg["bench.sparse"]:
        return fit_sparse(sample, kernel, out, lam, tol=cfg["bench.sparse_tol"])
    return fit(sample, kernel, out, lam)


def _planner_cfg(cfg: RunConfig) -> PlannerConfig:
    return PlannerConfig(cfg.gamma(), cfg.planner_actions(), cfg["planner.max_iters"],
                         cfg["planner.threshold"], cfg["planner.normalized"])


def _write_maps(out: Path, shape, values, action_idx, cfg):
    (out / "value.svg").write_text(bench.heatmap_svg(np.reshape(values, shape), "estimated value"))
    colours = bench.ACTION_COLORS if cfg.env == "gridworld" and len(cfg.planner_actions()) <= 4 else None
    (out / "policy.svg").write_text(bench.heatmap_svg(np.reshape(action_idx, shape).astype(float), "policy", colours))


def cmd_sample(args, cfg: RunConfig) -> int:
    env = args.env or cfg.env
    if env not in ("gridworld", "pendulum"):
        raise UsageError(f"unknown environment {env!r} (expected gridworld or pendulum)")
    if args.exhaustive is not None:
        if env != "gridworld":
            raise UsageError("--exhaustive is only defined for the gridworld")
        if args.exhaustive < 1:
            raise UsageError("--exhaustive needs a positive count")
        sample = exhaustive_sample(gridworld_mdp(cfg.grid_spec()), args.exhaustive)
    else:
        if args.m is None or args.m < 1:
            raise UsageError("--m must be a positive integer")
        if env == "gridworld":
            sample = gridworld_sample(gridworld_mdp(cfg.grid_spec()), args.m, args.seed)
        else:
            spec = cfg.pendulum_spec()
            acts = cfg.with_values(env__name="pendulum").planner_actions()
            sample = pendulum_sample(spec, args.m, len(acts), args.seed)
    write_sample_csv(args.out, sample)
    print(f"wrote {sample.m} transitions to {args.out}")
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig) -> int:
    sample = read_sample_csv(args.data)
    emb = _embedding(cfg, sample, args.seed)
    est = value_iteration(emb, _reward(cfg), _planner_cfg(cfg))
    X, shape = _eval_states(cfg)
    V = est(X)
    pol = GreedyPolicy(est)
    idx = pol.action_indices(X)
    acts = np.asarray(est.actions)[idx]
    args.out.mkdir(parents=True, exist_ok=True)
    write_values_csv(args.out / "values.csv", X, V)
    write_policy_csv(args.out / "policy.csv", X, acts)
    _write_maps(args.out, shape, V, idx, cfg)
    line = f"lambda={emb.lam:.6g} iterations={est.iterations} residual={est.final_error:.3e}"
    if cfg.env == "gridworld":
        mdp = gridworld_mdp(cfg.grid_spec())
        V_star, _ = exact_value_iteration(mdp, tol=1e-12)
        full = np.zeros((mdp.n_states, mdp.n_actions))
        full[:, list(est.actions)] = est.q_values(X)
        full[:, [a for a in range(mdp.n_actions) if a not in est.actions]] = -np.inf
        V_pi = exact_policy_value(mdp, np.argmax(full, axis=1))
        line += f" gap_to_oracle={np.mean(V_star - V_pi):.6g} value_error={np.max(np.abs(V - V_star)):.6g}"
    print(line)
    return EXIT_OK


def _table_policy(states, actions, angular_dims):
    def policy(X):
        d = sq_dists(np.asarray(X, float), states, angular_dims)
        return actions[np.argmin(d, axis=1)]
    return policy


def cmd_eval(args, cfg: RunConfig) -> int:
    sample = read_sample_csv(args.data)
    P_states, P_actions = read_policy_csv(args.policy)
    if P_states.shape[1] != sample.dim:
        raise DataFormatError(args.policy, 1, f"policy states have {P_states.shape[1]} dims, data has {sample.dim}")
    known = set(np.asarray(cfg.planner_actions()).tolist())
    unknown = [a for a in np.unique(P_actions).tolist() if a not in known]
    if unknown:
        raise DataFormatError(args.policy, 0, f"actions {unknown} are not in planner.actions")
    policy = _table_policy(P_states, P_actions, cfg.angular_dims())
    emb = _embedding(cfg, sample, args.seed)
    est = evaluate_policy(emb, policy, _reward(cfg), _planner_cfg(cfg))
    X, shape = _eval_states(cfg)
    V = est(X)
    args.out.mkdir(parents=True, exist_ok=True)
    write_values_csv(args.out / "values.csv", X, V)
    (args.out / "value.svg").write_text(bench.heatmap_svg(np.reshape(V, shape), "estimated policy value"))
    line = f"lambda={emb.lam:.6g} iterations={est.iterations} residual={est.final_error:.3e}"
    if cfg.env == "gridworld":
        mdp = gridworld_mdp(cfg.grid_spec())
        V_pi = exact_policy_value(mdp, np.asarray(policy(mdp.coords), dtype=int))
        line += f" value_error={np.max(np.abs(V - V_pi)):.6g}"
    print(line)
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r} (expected {', '.join(EXPERIMENTS)})")
    sizes = cfg.bench_sizes(args.experiment)
    seeds = list(range(args.seed, args.seed + cfg["bench.seeds"]))
    bc = cfg.bench_config()
    if args.experiment == "grid":
        run = bench.run_experiment1(sizes, seeds, cfg=bc)
    elif args.experiment == "pendulum":
        run = bench.run_experiment2(sizes, seeds, cfg=bc)
    else:
        env = "grid" if cfg.env == "gridworld" else "pendulum"
        run = bench.run_value_estimation(sizes, seeds, env, cfg=bc)
    bench.write_outputs(run, args.out_dir)
    for size, name, mean, se, count in run.summary():
        if name in ("gap", "prediction_mean", "estimate_error"):
            print(f"{run.experiment} m={size} {name} {mean:.6g} +/- {se:.3g} (n={count})")
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "plan": cmd_plan, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    if args.command == "defaults":
        sys.stdout.write(render_defaults())
        return EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config(args)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args, cfg)
    except (PlanningError, UndefinedQueryError, DegenerateDataError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
