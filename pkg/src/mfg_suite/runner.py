"""Config parsing, validation, run execution and artifact writing.

A config is a YAML file with nested sections (environment, solver, neural,
sweep) plus top-level seed. The sweep section maps dotted config paths to
value lists; runs expand to the cartesian product, one subdirectory per swept
value, with the directory layout a pure function of the config.

Artifacts per run directory:
  exploitability.csv   iteration,exploitability,wall_seconds
  distribution_flow.csv  n,state,mass  (n,population,state,mass when multi-pop)
  manifest.txt         key=value lines: resolved config, seed, git describe

By default the wall_seconds column is written as 0.0 so that repeated runs of
one config+seed are byte-identical; pass timing=True for measured values.
"""

from __future__ import annotations

import itertools
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .core import Policy, SolverParams
from .environments import (
    GridSpec,
    LqParams,
    SisParams,
    four_rooms_env,
    grid_spec_from_map,
    lq_env,
    maze_env,
    multipop_env,
    multipop_params_from_map,
    sis_env,
    toy_env,
    MultiPopEnvironment,
    _packaged_map,
)
from . import exact_solvers, deep_solvers


class ConfigError(ValueError):
    """Invalid or unknown configuration entry; message carries the field path."""


class MissingArtifact(FileNotFoundError):
    """A compared directory lacks the expected exploitability CSV."""


ENV_FIELDS = {
    "sis": {"n_t": int, "recovery": float, "infection": float, "infected_cost": float,
            "distancing_cost": float, "infected0": float},
    "lq": {"n_t": int, "sigma": float, "dt": float, "q_coef": float, "kappa": float,
           "c_term": float, "num_states": int},
    "four_rooms": {"n_t": int, "map": str},
    "maze": {"n_t": int, "map": str, "wall_aware_distance": bool},
    "multipop": {"n_t": int, "map": str},
    "toy": {},
}

SOLVER_FIELDS = {
    "tau": float, "alpha": float, "eta": float, "iterations": int,
    "inner_steps": int, "batch_size": int, "epsilon_start": float,
    "epsilon_end": float, "n_samples": int, "sl_steps": int, "soft": bool,
    "episodes_per_iteration": int, "exact_minibatch": bool,
}

NEURAL_FIELDS = {
    "hidden_sizes": list, "learning_rate": float, "lr_decay": float,
    "sl_learning_rate": float, "target_refresh": int, "replay_capacity": int,
    "reservoir_capacity": int, "joint_onehot": bool,
}

TABULAR_SOLVERS = {
    "banach_picard": exact_solvers.banach_picard,
    "fictitious_play": exact_solvers.fictitious_play,
    "policy_iteration": exact_solvers.policy_iteration,
    "omd": exact_solvers.omd,
    "momd": exact_solvers.momd,
    "boltzmann": exact_solvers.boltzmann_iteration,
}

DEEP_SOLVERS = {
    "d_bp": deep_solvers.d_bp,
    "d_pi": deep_solvers.d_pi,
    "d_bi": deep_solvers.d_bi,
    "d_afp": deep_solvers.d_afp,
    "d_momd": deep_solvers.d_momd,
}


def _check_fields(section: dict, allowed: dict, path: str) -> None:
    for key, value in section.items():
        if key == "name":
            continue
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field")
        want = allowed[key]
        if want in (int, float) and isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected {want.__name__}, got bool")
        if want is float and isinstance(value, int):
            continue
        if not isinstance(value, want):
            raise ConfigError(f"{path}.{key}: expected {want.__name__}, got {type(value).__name__}")


def validate_config(cfg: dict) -> dict:
    """Type- and key-check a raw config dict; returns it unchanged if valid."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    for key in cfg:
        if key not in ("environment", "solver", "neural", "sweep", "seed"):
            raise ConfigError(f"{key}: unknown section")
    env_sec = cfg.get("environment")
    if not isinstance(env_sec, dict) or "name" not in env_sec:
        raise ConfigError("environment.name: required")
    if env_sec["name"] not in ENV_FIELDS:
        raise ConfigError(f"environment.name: unknown environment {env_sec['name']!r}")
    _check_fields(env_sec, ENV_FIELDS[env_sec["name"]], "environment")
    sol_sec = cfg.get("solver")
    if not isinstance(sol_sec, dict) or "name" not in sol_sec:
        raise ConfigError("solver.name: required")
    if sol_sec["name"] not in {**TABULAR_SOLVERS, **DEEP_SOLVERS}:
        raise ConfigError(f"solver.name: unknown solver {sol_sec['name']!r}")
    _check_fields(sol_sec, SOLVER_FIELDS, "solver")
    _check_fields(cfg.get("neural", {}) or {}, NEURAL_FIELDS, "neural")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError("seed: expected int")
    sweep = cfg.get("sweep", {}) or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: must map dotted config paths to value lists")
    for key, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: expected a nonempty list")
        head = key.split(".", 1)[0]
        if head not in ("environment", "solver", "neural", "seed"):
            raise ConfigError(f"sweep.{key}: not a sweepable path")
    # eagerly surface invalid values (e.g. iterations: 0) before any run starts
    build_params(cfg)
    return cfg


def load_config(path) -> dict:
    with open(path) as f:
        raw = yaml.safe_load(f)
    return validate_config(raw)


def build_environment(cfg: dict):
    sec = dict(cfg["environment"])
    name = sec.pop("name")
    if name == "sis":
        return sis_env(SisParams(**sec))
    if name == "lq":
        return lq_env(LqParams(**sec))
    if name == "toy":
        return toy_env()
    n_t = sec.pop("n_t", 40)
    map_path = sec.pop("map", None)
    text = Path(map_path).read_text() if map_path else _packaged_map(name)
    if name == "four_rooms":
        return four_rooms_env(grid_spec_from_map(text, n_t=n_t))
    if name == "maze":
        return maze_env(
            grid_spec_from_map(text, n_t=n_t),
            wall_aware_distance=sec.pop("wall_aware_distance", False),
        )
    if name == "multipop":
        return multipop_env(multipop_params_from_map(text, n_t=n_t))
    raise ConfigError(f"environment.name: unknown environment {name!r}")


def build_params(cfg: dict) -> SolverParams:
    fields = {}
    for section in ("solver", "neural"):
        for key, value in (cfg.get(section, {}) or {}).items():
            if key == "name":
                continue
            fields[key] = tuple(value) if key == "hidden_sizes" else value
    fields["seed"] = cfg.get("seed", 0)
    try:
        return SolverParams(**fields)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def flatten_config(cfg: dict, prefix: str = "") -> dict:
    out = {}
    for key in sorted(cfg):
        value = cfg[key]
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten_config(value, prefix=f"{path}."))
        else:
            out[path] = value
    return out


def set_by_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def expand_sweep(cfg: dict):
    """Yield (relative_path, resolved_config) pairs; base config if no sweep."""
    sweep = cfg.get("sweep", {}) or {}
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    if not sweep:
        yield Path("."), base
        return
    keys = sorted(sweep)
    for combo in itertools.product(*(sweep[k] for k in keys)):
        resolved = yaml.safe_load(yaml.safe_dump(base))  # deep copy
        rel = Path(".")
        for key, value in zip(keys, combo):
            set_by_path(resolved, key, value)
            rel = rel / f"{key}={value}"
        yield rel, resolved


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


@dataclass
class RunResult:
    out_dir: Path
    final_exploitability: float
    best_exploitability: float


def execute_run(cfg: dict, out_dir, timing: bool = False) -> RunResult:
    """Run one resolved config and write the three artifacts into out_dir."""
    validate_config({k: v for k, v in cfg.items() if k != "sweep"})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    params = build_params(cfg)
    name = cfg["solver"]["name"]
    if name in TABULAR_SOLVERS:
        fn = TABULAR_SOLVERS[name]
        if name == "boltzmann":
            ref = Policy.uniform(env.horizon.n_t, env.num_states, env.num_actions)
            trace = fn(env, params, ref)
        else:
            trace = fn(env, params)
    else:
        fn = DEEP_SOLVERS[name]
        rng = params.rng()
        if name == "d_bi":
            ref = Policy.uniform(env.horizon.n_t, env.num_states, env.num_actions)
            trace = fn(env, params, ref, rng)
        else:
            trace = fn(env, params, rng)

    gaps = trace.exploitability_per_iteration
    if not np.isfinite(gaps).all():
        raise RuntimeError("non-finite exploitability recorded")
    seconds = trace.seconds_per_iteration if timing else np.zeros_like(gaps)
    with open(out_dir / "exploitability.csv", "w") as f:
        f.write("iteration,exploitability,wall_seconds\n")
        for i, (g, s) in enumerate(zip(gaps, seconds), start=1):
            f.write(f"{i},{float(g)!r},{s:.6f}\n")

    flow = trace.final_flow.flow
    with open(out_dir / "distribution_flow.csv", "w") as f:
        if isinstance(env, MultiPopEnvironment):
            f.write("n,population,state,mass\n")
            for n in range(flow.shape[0]):
                slices = env.population_slices(flow[n])
                for i in range(env.num_pops):
                    for cell in range(env.cells):
                        f.write(f"{n},{i + 1},{cell},{float(slices[i, cell])!r}\n")
        else:
            f.write("n,state,mass\n")
            for n in range(flow.shape[0]):
                for x in range(flow.shape[1]):
                    f.write(f"{n},{x},{float(flow[n, x])!r}\n")

    manifest = flatten_config({k: v for k, v in cfg.items() if k != "sweep"})
    manifest["seed"] = cfg.get("seed", 0)
    manifest["git_describe"] = _git_describe()
    manifest["suite_version"] = __version__
    manifest["wall_seconds_total"] = f"{float(np.sum(trace.seconds_per_iteration)):.6f}"
    with open(out_dir / "manifest.txt", "w") as f:
        for key in sorted(manifest):
            f.write(f"{key}={manifest[key]}\n")
    return RunResult(out_dir, float(gaps[-1]), float(gaps.min()))


def read_exploitability(run_dir) -> np.ndarray:
    path = Path(run_dir) / "exploitability.csv"
    if not path.exists():
        raise MissingArtifact(f"{run_dir}: no exploitability.csv")
    rows = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=float)
    rows = np.atleast_2d(rows)
    return rows[:, 1]


def default_output_root() -> Path:
    return Path(os.environ.get("MFG_SUITE_OUT", "mfg-runs"))
