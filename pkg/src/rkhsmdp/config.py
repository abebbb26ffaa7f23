"""Flat ``section.key = value`` run configuration.

Lines starting with ``#`` and blank lines are ignored.  Every key has a
default (see :data:`SCHEMA`); unknown keys and values that fail validation
raise :class:`ConfigError` before any computation starts.  ``auto`` picks the
environment-specific default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .bench import BenchConfig
from .embedding import default_lambda_grid
from .environments import GridworldSpec, PendulumSpec, pendulum_torques
from .kernels import StateActionKernelConfig

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "render_defaults"]

ENVIRONMENTS = ("gridworld", "pendulum")


class ConfigError(ValueError):
    pass


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _positive(cast):
    def parse(text):
        v = cast(text)
        if not v > 0 or not math.isfinite(v):
            raise ValueError("must be positive and finite")
        return v
    return parse


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _auto(parse):
    return lambda text: "auto" if text == "auto" else parse(text)


def _list(parse):
    def run(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(parse(t) for t in items)
    return run


def _unit_interval(text):
    v = float(text)
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")
    return v


def _gamma(text):
    v = float(text)
    if not 0 <= v < 1:
        raise ValueError("must lie in [0, 1)")
    return v


def _actions(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if len(items) == 1:
        n = int(items[0])
        if n < 1:
            raise ValueError("action count must be >= 1")
        return n
    return tuple(float(t) for t in items)


# key -> (parser, default, description)
SCHEMA: dict[str, tuple[Callable[[str], Any], str, str]] = {
    "env.name": (_choice(*ENVIRONMENTS), "gridworld", "gridworld or pendulum"),
    "env.grid_n": (_positive(int), "50", "gridworld side length"),
    "env.success": (_unit_interval, "0.8", "probability the chosen move is kept"),
    "env.reward_bandwidth": (_auto(_positive(float)), "auto", "gridworld reward width (auto: n/10)"),
    "env.dt": (_positive(float), "0.1", "pendulum Euler step"),
    "env.friction": (float, "0.05", "pendulum friction coefficient"),
    "env.max_torque": (_positive(float), "5.0", "pendulum torque bound"),
    "env.max_speed": (_positive(float), "7.0", "pendulum angular speed clamp"),
    "env.reference_resolution": (_positive(int), "97", "pendulum reference grid points per axis"),
    "env.eval_points": (_positive(int), "25", "pendulum evaluation grid points per axis"),
    "kernel.bandwidth_heuristic": (_choice("auto", "fixed", "knn", "cv"), "auto",
                                   "fixed, knn or cv (auto: cv on gridworld, knn on pendulum)"),
    "kernel.state_bandwidth": (_positive(float), "3.0", "state width for the fixed heuristic"),
    "kernel.action_kind": (_choice("auto", "delta", "gaussian"), "auto",
                           "action kernel (auto: delta on gridworld, gaussian on pendulum)"),
    "kernel.action_bandwidth": (_positive(float), "1.0", "gaussian action width for the fixed heuristic"),
    "kernel.knn_fraction": (_unit_interval, "0.25", "neighbour fraction for the knn heuristic"),
    "kernel.bandwidth_candidates": (_list(_positive(float)), "1,2,3,5,8", "state widths tried by the cv heuristic"),
    "kernel.output_bandwidth": (_positive(float), "3.0", "output kernel width held fixed during cv"),
    "planner.gamma": (_auto(_gamma), "auto", "discount (auto: 0.9 gridworld, 0.95 pendulum)"),
    "planner.max_iters": (_positive(int), "1000", "sweep cap"),
    "planner.threshold": (_positive(float), "1e-6", "sup-norm residual stopping threshold"),
    "planner.actions": (_auto(_actions), "auto", "action count or explicit list (auto: 4 moves / 25 torques)"),
    "planner.normalized": (_bool, "true", "use L1-normalised weights"),
    "cv.lambda": (_auto(_positive(float)), "auto", "fixed regulariser, or auto to cross-validate"),
    "cv.lambda_grid": (_auto(_list(_positive(float))), "auto", "candidate regularisers (auto: 10 log-spaced in [1e-6, 1])"),
    "cv.folds": (_positive(int), "5", "cross-validation folds"),
    "bench.sizes": (_auto(_list(_positive(int))), "auto", "sample sizes (auto: 1000,5000 grid; 100..800 pendulum)"),
    "bench.seeds": (_positive(int), "10", "number of seeds, counted up from --seed"),
    "bench.sparse": (_bool, "false", "use the incomplete Cholesky path"),
    "bench.sparse_tol": (_positive(float), "1e-6", "incomplete Cholesky residual tolerance"),
}


def render_defaults() -> str:
    """A commented configuration file listing every key at its default."""
    lines = []
    for key, (_, default, doc) in SCHEMA.items():
        lines.append(f"# {doc}")
        lines.append(f"{key} = {default}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: SCHEMA[k][0](d) for k, (_, d, _) in SCHEMA.items()}
        for key, value in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}")
            merged[key] = value
        object.__setattr__(self, "values", merged)
        self._check()

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.split("#", 1)[0].strip()
            if not sep or not key:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = SCHEMA[key][0](value)
            except ValueError as err:
                raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}: {err}") from None
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Raises ``OSError`` when unreadable, :class:`ConfigError` when invalid."""
        return cls.parse(Path(path).read_text(encoding="utf-8"), str(path))

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, **changes) -> "RunConfig":
        """Copy with dotted keys given as ``section__key`` keyword names."""
        vals = dict(self.values)
        for k, v in changes.items():
            vals[k.replace("__", ".")] = v
        return RunConfig(vals)

    def _check(self):
        try:
            self.grid_spec()
            self.pendulum_spec()
            self.planner_actions()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self["env.name"] == "gridworld" and self["env.grid_n"] < 2:
            raise ConfigError("env.grid_n must be >= 2")
        if self["env.reference_resolution"] < 25:
            raise ConfigError("env.reference_resolution must be >= 25")
        if self["cv.folds"] < 2:
            raise ConfigError("cv.folds must be >= 2")

    # -- derived objects --------------------------------------------------------

    @property
    def env(self) -> str:
        return self["env.name"]

    def gamma(self) -> float:
        g = self["planner.gamma"]
        if g != "auto":
            return g
        return 0.9 if self.env == "gridworld" else 0.95

    def grid_spec(self) -> GridworldSpec:
        rb = self["env.reward_bandwidth"]
        return GridworldSpec(self["env.grid_n"], None if rb == "auto" else rb, self["env.success"],
                             self.gamma() if self.env == "gridworld" else 0.9)

    def pendulum_spec(self) -> PendulumSpec:
        return PendulumSpec(dt=self["env.dt"], friction=self["env.friction"], max_torque=self["env.max_torque"],
                            max_speed=self["env.max_speed"],
                            gamma=self.gamma() if self.env == "pendulum" else 0.95)

    def planner_actions(self) -> tuple:
        acts = self["planner.actions"]
        if self.env == "gridworld":
            if acts == "auto" or acts == 4:
                return (0, 1, 2, 3)
            if isinstance(acts, int) or any(a not in (0, 1, 2, 3) for a in acts):
                raise ValueError("gridworld actions must be 4 or a list drawn from 0,1,2,3")
            return tuple(int(a) for a in acts)
        if acts == "auto":
            acts = 25
        if isinstance(acts, int):
            return tuple(pendulum_torques(self.pendulum_spec(), acts))
        return tuple(acts)

    def lam_grid(self) -> tuple:
        g = self["cv.lambda_grid"]
        return tuple(default_lambda_grid()) if g == "auto" else g

    def heuristic(self) -> str:
        h = self["kernel.bandwidth_heuristic"]
        if h != "auto":
            return h
        return "cv" if self.env == "gridworld" else "knn"

    def action_kind(self) -> str:
        k = self["kernel.action_kind"]
        if k != "auto":
            return k
        return "delta" if self.env == "gridworld" else "gaussian"

    def angular_dims(self) -> tuple:
        return (0,) if self.env == "pendulum" else ()

    def fixed_kernel(self) -> StateActionKernelConfig:
        return StateActionKernelConfig(self["kernel.state_bandwidth"], self.action_kind(),
                                       self["kernel.action_bandwidth"], self.angular_dims())

    def bench_sizes(self, experiment: str) -> tuple:
        s = self["bench.sizes"]
        if s != "auto":
            return s
        return (1000, 5000) if experiment == "grid" else (100, 200, 400, 800)

    def bench_config(self) -> BenchConfig:
        return BenchConfig(
            grid=self.grid_spec(),
            grid_bandwidths=self["kernel.bandwidth_candidates"],
            grid_output_bandwidth=self["kernel.output_bandwidth"],
            pendulum=self.pendulum_spec(),
            action_count=len(self.planner_actions()) if self.env == "pendulum" else 25,
            knn_fraction=self["kernel.knn_fraction"],
            reference_resolution=self["env.reference_resolution"],
            eval_points=self["env.eval_points"],
            lam_grid=self.lam_grid(),
            folds=self["cv.folds"],
            max_iters=self["planner.max_iters"],
            threshold=self["planner.threshold"],
            normalized=self["planner.normalized"],
            sparse=self["bench.sparse"],
            sparse_tol=self["bench.sparse_tol"],
        )
