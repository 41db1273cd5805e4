"""Benchmark harness behind the command-line interface.

Configs are nested key-value mappings (JSON on disk) merged as
defaults < config file < command-line flags, validated against per-method
and per-problem schemas before any compute. Every run writes one CSV with a
fixed column schema plus a JSON summary; tunnel runs also persist the exact
environment so a run is fully reconstructable from its artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Population, SoftmaxConfig
from .optimizers import (
    CboParams,
    GaussianSearchState,
    RunRecord,
    StoppingRule,
    run_cbo,
    run_gaussian_method,
    sample_gaussian_population,
)
from .pointmass import (
    EnvGenConfig,
    PointMassEnv,
    PointMassProblem,
    default_env,
    env_to_dict,
    generate_environment,
    load_env,
    point_mass_rollout,
    save_env,
)
from .problems import HimmelblauProblem
from .render import himmelblau_scene_svg, tunnel_scene_svg, write_svg
from .rng import DRAW_INIT, RngStream

OUT_DIR_ENV_VAR = "ZOTRAJ_OUT_DIR"

CSV_COLUMNS = (
    "iteration",
    "best_cost",
    "mean_cost",
    "consensus_cost",
    "population_diameter",
    "sigma_or_alpha",
    "wallclock_ms",
)

METHODS = ("cbo", "cbs", "mppi", "cma", "cem")
PROBLEMS = ("himmelblau", "tunnel")


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""


_DEFAULTS: dict = {
    "problem": {
        "name": "himmelblau",
        # himmelblau
        "alpha": 0.01,
        # tunnel
        "horizon": 100,
        "dt": 0.2,
        "env_seed": 0,
        "obstacle_count": [8, 8],
        "radius_range": [0.3, 0.6],
    },
    "method": {
        "name": "cbo",
        "lambda": 1.0,
        "sigma0": 1.0,
        "dt": 0.3,
        "sigma_decay": None,  # None -> reach 1% of sigma0 at the last iteration
        "rho": 1.0,
        "rho_final": None,
        "noise_mode": "isotropic",
        "alpha": 0.5,
        "elite_frac": 0.1,
    },
    "run": {
        "pop": 300,
        "seed": 0,
        "iters": 100,
        "threads": 1,
        "out_dir": None,  # None -> $ZOTRAJ_OUT_DIR or ./runs
        "render": False,
        "init": None,  # None -> uniform for himmelblau, gaussian for tunnel
        "init_low": -6.0,
        "init_high": 6.0,
        "consensus_tol": 0.0,
        "diameter_tol": 0.0,
        "cost_threshold": None,
    },
    "compare": {
        "methods": ["cbo", "mppi", "cma"],
        "env_seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
    },
}

_PROBLEM_KEYS = {
    "himmelblau": {"name", "alpha"},
    "tunnel": {"name", "horizon", "dt", "env_seed", "obstacle_count", "radius_range"},
}
_METHOD_KEYS = {
    "cbo": {"name", "lambda", "sigma0", "dt", "sigma_decay", "rho", "rho_final", "noise_mode"},
    "cbs": {"name", "dt", "rho"},
    "mppi": {"name", "sigma0", "rho"},
    "cma": {"name", "sigma0", "alpha", "elite_frac", "rho"},
    "cem": {"name", "sigma0", "alpha", "elite_frac"},
}
_RUN_KEYS = set(_DEFAULTS["run"])
_COMPARE_KEYS = set(_DEFAULTS["compare"])


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, an optional JSON config file, and explicit overrides.

    Method fields are validated as a shared pool here (a compare config may
    carry parameters for several methods); cmd run re-validates strictly
    against its single selected method.
    """
    cfg = dict(_DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = _merge(cfg, file_cfg)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg, strict_method_fields=False)
    return cfg


def validate_config(cfg: dict, strict_method_fields: bool = True) -> None:
    unknown = set(cfg) - {"problem", "method", "run", "compare"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    problem = cfg["problem"]["name"]
    if problem not in PROBLEMS:
        raise ConfigError(f"problem.name must be one of {PROBLEMS}, got {problem!r}")
    method = cfg["method"]["name"]
    if method not in METHODS:
        raise ConfigError(f"method.name must be one of {METHODS}, got {method!r}")
    extra = set(cfg["problem"]) - set(_DEFAULTS["problem"])
    if extra:
        raise ConfigError(f"unknown problem fields: {sorted(extra)}")
    declared = {
        k for k in cfg["problem"] if cfg["problem"][k] != _DEFAULTS["problem"].get(k)
    }
    stray = declared - _PROBLEM_KEYS[problem]
    if stray:
        raise ConfigError(
            f"problem fields {sorted(stray)} do not apply to problem {problem!r}"
        )
    extra = set(cfg["method"]) - set(_DEFAULTS["method"])
    if extra:
        raise ConfigError(f"unknown method fields: {sorted(extra)}")
    if strict_method_fields:
        declared = {
            k for k in cfg["method"] if cfg["method"][k] != _DEFAULTS["method"].get(k)
        }
        stray = declared - _METHOD_KEYS[method]
        if stray:
            raise ConfigError(
                f"method fields {sorted(stray)} do not apply to method {method!r}"
            )
    extra = set(cfg["run"]) - _RUN_KEYS
    if extra:
        raise ConfigError(f"unknown run fields: {sorted(extra)}")
    extra = set(cfg["compare"]) - _COMPARE_KEYS
    if extra:
        raise ConfigError(f"unknown compare fields: {sorted(extra)}")
    run = cfg["run"]
    if run["pop"] < 1:
        raise ConfigError(f"run.pop must be at least 1, got {run['pop']}")
    if run["iters"] < 1:
        raise ConfigError(f"run.iters must be at least 1, got {run['iters']}")
    if run["threads"] < 1:
        raise ConfigError(f"run.threads must be at least 1, got {run['threads']}")
    for name in cfg["compare"]["methods"]:
        if name not in METHODS:
            raise ConfigError(f"compare.methods entry {name!r} is not a method")
    if len(set(cfg["compare"]["methods"])) != len(cfg["compare"]["methods"]):
        raise ConfigError("compare.methods contains duplicates")


def resolve_out_dir(cfg: dict) -> Path:
    out = cfg["run"]["out_dir"]
    if out is None:
        out = os.environ.get(OUT_DIR_ENV_VAR, "runs")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_problem(cfg: dict):
    """Problem instance plus its environment (tunnel only)."""
    p = cfg["problem"]
    if p["name"] == "himmelblau":
        return HimmelblauProblem(alpha=p["alpha"]), None
    env = generate_environment(
        EnvGenConfig(
            seed=p["env_seed"],
            obstacle_count=tuple(p["obstacle_count"]),
            radius_range=tuple(p["radius_range"]),
        ),
        base=default_env(dt=p["dt"]),
    )
    return PointMassProblem(env, horizon=p["horizon"]), env


def _init_kind(cfg: dict) -> str:
    kind = cfg["run"]["init"]
    if kind is None:
        kind = "uniform" if cfg["problem"]["name"] == "himmelblau" else "gaussian"
    if kind not in ("uniform", "gaussian"):
        raise ConfigError(f"run.init must be 'uniform' or 'gaussian', got {kind!r}")
    return kind


def initial_population(cfg: dict, problem, rng: RngStream) -> Population:
    """Shared starting population, one particle substream each."""
    n, dim = cfg["run"]["pop"], problem.dim
    if _init_kind(cfg) == "uniform":
        lo, hi = cfg["run"]["init_low"], cfg["run"]["init_high"]
        rows = np.empty((n, dim))
        for i in range(n):
            rows[i] = rng.uniform(lo, hi, dim, iteration=0, particle=i, draw=DRAW_INIT)
        return Population(rows, iteration=0)
    # Gaussian init reuses the draws a Gaussian method would make at
    # iteration 0, so sharing the population does not change any method's
    # stream consumption.
    return sample_gaussian_population(gaussian_state(cfg, problem), n, rng, iteration=0)


def gaussian_state(cfg: dict, problem) -> GaussianSearchState:
    m = cfg["method"]
    n = cfg["run"]["pop"]
    elite = max(1, int(round(m["elite_frac"] * n)))
    step = m["alpha"] if m["name"] in ("cma", "cem") else 1.0
    if m["name"] == "cma":
        cov = (m["sigma0"] ** 2) * np.eye(problem.dim)
        diag = False
    else:
        cov = np.full(problem.dim, float(m["sigma0"]) ** 2)
        diag = True
    return GaussianSearchState(
        mean=np.zeros(problem.dim),
        cov=cov,
        step=step,
        elite_count=min(elite, n),
        diag=diag,
    )


def cbo_params(cfg: dict) -> CboParams:
    m = cfg["method"]
    decay = m["sigma_decay"]
    if decay is None:
        decay = 0.01 ** (1.0 / max(1, cfg["run"]["iters"]))
    return CboParams(
        lambda_=m["lambda"],
        sigma0=m["sigma0"],
        dt=m["dt"],
        sigma_decay=decay,
        noise_mode=m["noise_mode"],
        softmax=SoftmaxConfig(m["rho"]),
        rho_final=m["rho_final"],
    )


def stopping_rule(cfg: dict) -> StoppingRule:
    run = cfg["run"]
    return StoppingRule(
        max_iterations=run["iters"],
        consensus_tol=run["consensus_tol"],
        diameter_tol=run["diameter_tol"],
    )


def execute_method(
    cfg: dict, method: str, problem, init: Population, rng: RngStream
) -> RunRecord:
    """Run one method from a shared initial population."""
    m = cfg["method"]
    stop = stopping_rule(cfg)
    threads = cfg["run"]["threads"]
    if method == "cbo":
        return run_cbo(problem, init, cbo_params(cfg), stop, rng, threads=threads)
    if method == "cbs":
        params = CboParams(
            lambda_=1.0 / m["dt"],
            sigma0=math.sqrt(m["dt"]),
            dt=m["dt"],
            softmax=SoftmaxConfig(m["rho"]),
        )
        return run_cbo(problem, init, params, stop, rng, threads=threads)
    state = gaussian_state(cfg, problem)
    return run_gaussian_method(
        method,
        problem,
        state,
        cfg["run"]["pop"],
        stop,
        rng,
        softmax=SoftmaxConfig(m["rho"]),
        init_population=init,
        threads=threads,
    )


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_run_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in record.rows:
            writer.writerow(
                [
                    row.iteration,
                    format_value(row.best_cost),
                    format_value(row.mean_cost),
                    format_value(row.consensus_cost),
                    format_value(row.population_diameter),
                    format_value(row.sigma_or_alpha),
                    format_value(row.wallclock_ms),
                ]
            )


def env_hash(env: PointMassEnv) -> str:
    payload = json.dumps(env_to_dict(env), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def run_prefix(cfg: dict, method: str | None = None, with_case: bool | None = None) -> str:
    method = method or cfg["method"]["name"]
    prefix = f"{cfg['problem']['name']}_{method}_seed{cfg['run']['seed']}"
    if with_case is None:
        with_case = cfg["problem"]["name"] == "tunnel"
    if with_case:
        prefix += f"_env{cfg['problem']['env_seed']}"
    return prefix


@dataclass
class RunArtifacts:
    prefix: str
    csv_path: Path
    summary_path: Path
    env_path: Path | None
    svg_path: Path | None
    record: RunRecord


def write_summary(
    cfg: dict,
    method: str,
    record: RunRecord,
    out: Path,
    prefix: str,
    env: PointMassEnv | None,
) -> Path:
    summary = {
        "problem": cfg["problem"]["name"],
        "method": method,
        "seed": cfg["run"]["seed"],
        "iterations": len(record.rows),
        "best_cost": record.best_cost,
        "final_best_cost": record.final_best_cost(),
        "best_controls": record.best_controls.values.tolist(),
        "final_consensus": record.final_consensus.values.tolist(),
    }
    if cfg["problem"]["name"] == "himmelblau":
        summary["alpha"] = cfg["problem"]["alpha"]
    if env is not None:
        summary["env_seed"] = env.seed
        summary["env_hash"] = env_hash(env)
    if record.final_population.dim == 2:
        summary["final_population"] = record.final_population.particles.tolist()
    path = out / f"{prefix}_summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def execute_run(cfg: dict) -> RunArtifacts:
    """cmd run: one seeded method run, CSV + summary (+ env, + SVG)."""
    validate_config(cfg, strict_method_fields=True)
    out = resolve_out_dir(cfg)
    problem, env = build_problem(cfg)
    method = cfg["method"]["name"]
    rng = RngStream(cfg["run"]["seed"])
    init = initial_population(cfg, problem, rng)
    record = execute_method(cfg, method, problem, init, rng)
    prefix = run_prefix(cfg)
    csv_path = out / f"{prefix}.csv"
    write_run_csv(record, csv_path)
    env_path = None
    if env is not None:
        env_path = out / f"env_seed{env.seed}.json"
        save_env(env, env_path)
    summary_path = write_summary(cfg, method, record, out, prefix, env)
    svg_path = None
    if cfg["run"]["render"]:
        svg_path = render_artifacts(out / prefix)
    return RunArtifacts(prefix, csv_path, summary_path, env_path, svg_path, record)


@dataclass
class ComparisonCell:
    method: str
    env_seed: int
    final_best_cost: float
    best_cost: float
    iterations_to_threshold: int | None
    wallclock_ms: float
    env_hash: str
    csv_path: Path


@dataclass
class ComparisonSummary:
    cells: list[ComparisonCell]
    medians: dict[str, float]

    def final_costs(self, method: str) -> list[float]:
        return [c.final_best_cost for c in self.cells if c.method == method]


def _iterations_to_threshold(record: RunRecord, threshold) -> int | None:
    if threshold is None:
        return None
    for row in record.rows:
        if row.best_cost <= threshold:
            return row.iteration
    return None


def execute_compare(cfg: dict) -> tuple[ComparisonSummary, Path]:
    """cmd compare: every method sees identical environments and initial populations."""
    validate_config(cfg, strict_method_fields=False)
    out = resolve_out_dir(cfg)
    methods = cfg["compare"]["methods"]
    if not methods:
        raise ConfigError("compare.methods must not be empty")
    env_seeds = cfg["compare"]["env_seeds"]
    if not env_seeds:
        raise ConfigError("compare.env_seeds must not be empty")
    threshold = cfg["run"]["cost_threshold"]
    cells: list[ComparisonCell] = []
    for env_seed in env_seeds:
        case_cfg = _merge(cfg, {"problem": {"env_seed": env_seed}})
        problem, env = build_problem(case_cfg)
        if env is not None:
            save_env(env, out / f"env_seed{env.seed}.json")
        case_hash = env_hash(env) if env is not None else ""
        rng = RngStream(cfg["run"]["seed"], run=env_seed)
        init = initial_population(case_cfg, problem, rng)
        if init.dim != problem.dim:
            raise ConfigError(
                f"dimension mismatch: initial population {init.dim}, problem {problem.dim}"
            )
        for method in methods:
            method_cfg = _merge(case_cfg, {"method": {"name": method}})
            record = execute_method(method_cfg, method, problem, init, rng)
            prefix = run_prefix(method_cfg, method, with_case=True)
            csv_path = out / f"{prefix}.csv"
            write_run_csv(record, csv_path)
            write_summary(method_cfg, method, record, out, prefix, env)
            cells.append(
                ComparisonCell(
                    method=method,
                    env_seed=env_seed,
                    final_best_cost=record.final_best_cost(),
                    best_cost=record.best_cost,
                    iterations_to_threshold=_iterations_to_threshold(record, threshold),
                    wallclock_ms=sum(r.wallclock_ms for r in record.rows),
                    env_hash=case_hash,
                    csv_path=csv_path,
                )
            )
    medians = {
        m: float(np.median([c.final_best_cost for c in cells if c.method == m]))
        for m in methods
    }
    summary_path = out / "compare_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "method",
                "env_seed",
                "final_best_cost",
                "best_cost",
                "iterations_to_threshold",
                "wallclock_ms",
                "env_hash",
                "csv_file",
            ]
        )
        for cell in cells:
            writer.writerow(
                [
                    cell.method,
                    cell.env_seed,
                    format_value(cell.final_best_cost),
                    format_value(cell.best_cost),
                    ""
                    if cell.iterations_to_threshold is None
                    else cell.iterations_to_threshold,
                    format_value(cell.wallclock_ms),
                    cell.env_hash,
                    cell.csv_path.name,
                ]
            )
        for method in methods:
            writer.writerow(
                [method, "median", format_value(medians[method]), "", "", "", "", ""]
            )
    return ComparisonSummary(cells, medians), summary_path


def render_artifacts(prefix: Path, out_path: Path | None = None) -> Path:
    """cmd render: rebuild the scene SVG from a run's persisted artifacts."""
    prefix = Path(prefix)
    csv_path = prefix.with_suffix(".csv")
    summary_path = prefix.parent / f"{prefix.name}_summary.json"
    missing = [str(p) for p in (csv_path, summary_path) if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing run artifacts: {', '.join(missing)}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    if out_path is None:
        out_path = prefix.parent / f"{prefix.name}_scene.svg"
    if summary["problem"] == "tunnel":
        env_path = prefix.parent / f"env_seed{summary['env_seed']}.json"
        if not env_path.exists():
            raise FileNotFoundError(f"missing run artifacts: {env_path}")
        env = load_env(env_path)
        positions, _ = point_mass_rollout(np.array(summary["best_controls"]), env)
        write_svg(tunnel_scene_svg(env, positions), out_path)
    else:
        population = np.array(summary.get("final_population", []), dtype=float)
        if population.size == 0:
            population = np.array(summary["final_consensus"], dtype=float)[None, :]
        svg = himmelblau_scene_svg(summary.get("alpha", 0.01), population)
        write_svg(svg, out_path)
    return out_path
