"""Experiment runner: seeded replicated runs, trace persistence, aggregation.

Trace file layout (one file per run): a header line carrying the schema
version and run metadata as JSON, then one comma-separated record per event
with fields run_id, variant, event_kind, iteration, point (semicolon-joined
full-precision reals), y, incumbent.  Identical configurations produce
byte-identical files.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import bo
from .acquisition import LcbParams
from .objectives import NoiseModel, add_noise, library_suite, random_mnd, two_gaussian_2d

SCHEMA = "edgebo-trace v1"
CONFIG_ENV_VAR = "EDGEBO_CONFIG"
_NOISE_STREAM = 3

SUITES = ("two_gaussian", "mnd", "mnd_border", "library")
_SUITE_DEFAULT_BUDGET = {"two_gaussian": 19, "mnd": 38, "mnd_border": 38, "library": 38}

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    suite: str = "mnd"
    variants: tuple[str, ...] = ("vbo", "dbo", "adbo")
    n_runs: int = 20
    budget: int | None = None  # total evaluations incl. the 2^d init; None = suite default
    noise_std: float = 0.1
    epsilon_b: float = 0.01
    removal_radius: float = 0.01
    beta: float = 2.0
    beta_schedule: str = "constant"
    nu: float = 1e-6
    base_seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    force: bool = False

    def resolved_budget(self) -> int:
        return self.budget if self.budget is not None else _SUITE_DEFAULT_BUDGET[self.suite]


def _validate(config: ExperimentConfig) -> ExperimentConfig:
    if config.suite not in SUITES:
        raise ConfigError(f"suite: unknown value {config.suite!r}, expected one of {SUITES}")
    variants = tuple(v.lower() for v in config.variants)
    for v in variants:
        if v not in bo.VARIANTS:
            raise ConfigError(f"variants: unknown value {v!r}, expected subset of {bo.VARIANTS}")
    if not variants:
        raise ConfigError("variants: must name at least one algorithm")
    config = replace(config, variants=variants)
    if config.n_runs < 1:
        raise ConfigError(f"n_runs: must be >= 1, got {config.n_runs}")
    if config.budget is not None and config.budget < 1:
        raise ConfigError(f"budget: must be >= 1, got {config.budget}")
    if not 0.0 <= config.epsilon_b < 0.5:
        raise ConfigError(f"epsilon_b: must lie in [0, 0.5), got {config.epsilon_b}")
    if config.removal_radius < 0:
        raise ConfigError(f"removal_radius: must be >= 0, got {config.removal_radius}")
    if config.noise_std < 0:
        raise ConfigError(f"noise_std: must be >= 0, got {config.noise_std}")
    if not config.nu > 0:
        raise ConfigError(f"nu: must be > 0, got {config.nu}")
    if config.beta_schedule not in ("constant", "theoretical"):
        raise ConfigError(f"beta_schedule: unknown value {config.beta_schedule!r}")
    if config.beta < 0:
        raise ConfigError(f"beta: must be >= 0, got {config.beta}")
    if config.workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {config.workers}")
    return config


def parse_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then config-file values, then flag overrides (documented precedence)."""
    known = {f.name for f in fields(ExperimentConfig)}
    merged: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in file_values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            merged[key] = value
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            merged[key] = value
    if "variants" in merged and isinstance(merged["variants"], str):
        merged["variants"] = tuple(s for s in merged["variants"].replace(",", " ").split() if s)
    if "variants" in merged:
        merged["variants"] = tuple(merged["variants"])
    try:
        config = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return _validate(config)


# -- single runs ---------------------------------------------------------------


def _build_objective(suite: str, run_seed: int, run_index: int):
    if suite == "two_gaussian":
        return two_gaussian_2d()
    if suite == "mnd":
        return random_mnd(run_seed, d=3, interior=True)
    if suite == "mnd_border":
        return random_mnd(run_seed, d=3, interior=False)
    if suite == "library":
        return library_suite()[run_index % 3]
    raise ConfigError(f"unknown suite {suite!r}")


def _execute_run(config: ExperimentConfig, run_index: int, variant: str):
    run_seed = config.base_seed + run_index
    spec = _build_objective(config.suite, run_seed, run_index)
    noise = NoiseModel(config.noise_std)
    noise_rng = np.random.default_rng([run_seed, _NOISE_STREAM])

    def noisy(x):
        return add_noise(spec.evaluator(x), noise, noise_rng)

    run_config = bo.BoConfig(
        variant=variant,
        budget=config.resolved_budget(),
        epsilon_b=config.epsilon_b,
        removal_radius=config.removal_radius,
        beta=LcbParams(beta=config.beta, schedule=config.beta_schedule),
        seed=run_seed,
        nu=config.nu,
    )
    trace = bo.run(noisy, spec.domain, run_config)
    meta = {
        "schema": SCHEMA,
        "suite": config.suite,
        "variant": variant,
        "run_id": run_index,
        "seed": run_seed,
        "objective_id": spec.name,
        "budget": config.resolved_budget(),
        "dimension": spec.dimension,
        "noise_std": config.noise_std,
    }
    return meta, trace


def _format_value(v) -> str:
    return "" if v is None else repr(float(v))


def write_trace(path: str, meta: dict, trace: bo.BoTrace) -> None:
    lines = [f"# {SCHEMA} {json.dumps(meta, sort_keys=True)}"]
    run_id, variant = meta["run_id"], meta["variant"]
    for e in trace.events:
        point = ";".join(repr(float(c)) for c in e.point)
        lines.append(
            f"{run_id},{variant},{e.kind},{e.iteration},{point},"
            f"{_format_value(e.y)},{_format_value(e.incumbent)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# {SCHEMA} "):
        raise ValueError(f"{path}: not a {SCHEMA} file")
    meta = json.loads(lines[0][len(f"# {SCHEMA} ") :])
    trace = bo.BoTrace()
    for line in lines[1:]:
        if not line:
            continue
        run_id, variant, kind, iteration, point, y, incumbent = line.split(",")
        trace.append(
            bo.BoEvent(
                iteration=int(iteration),
                kind=kind,
                point=tuple(float(c) for c in point.split(";")),
                y=float(y) if y else None,
                incumbent=float(incumbent) if incumbent else None,
            )
        )
    return meta, trace


def _trace_path(out_dir: str, suite: str, variant: str, run_index: int) -> str:
    return os.path.join(out_dir, f"{suite}_{variant}_run{run_index:04d}.trace")


def _run_task(args):
    config, run_index, variant = args
    return _execute_run(config, run_index, variant)


def run_experiment(config: ExperimentConfig) -> int:
    """Execute n_runs x variants runs, persist one trace file each.

    Run i shares its seed, objective instance and noise stream across all
    variants for paired comparison.  Returns a process exit code.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    tasks = [
        (config, i, variant) for i in range(config.n_runs) for variant in config.variants
    ]
    paths = [_trace_path(config.out_dir, config.suite, v, i) for _, i, v in tasks]
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not config.force:
        print(
            f"refusing to overwrite {len(existing)} existing trace file(s) "
            f"(e.g. {existing[0]}); pass --force to overwrite",
            file=sys.stderr,
        )
        return EXIT_RUN_FAILURE

    failures = []
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_task, tasks))
        for (cfg, i, variant), path, result in zip(tasks, paths, results):
            write_trace(path, *result)
    else:
        for (cfg, i, variant), path in zip(tasks, paths):
            try:
                meta, trace = _execute_run(cfg, i, variant)
            except Exception as exc:
                failures.append((path, exc))
                print(f"run failed for {path}: {exc}", file=sys.stderr)
                continue
            write_trace(path, meta, trace)
    if failures:
        return EXIT_RUN_FAILURE
    return EXIT_OK


# -- aggregation ---------------------------------------------------------------


def aggregate(trace_dir: str, out_file: str | None = None):
    """Per (suite, variant, iteration) 25/50/75 percentiles of the incumbent.

    Percentiles use linear interpolation.  Returns the table rows; also
    writes them as CSV when out_file is given.
    """
    paths = sorted(
        os.path.join(trace_dir, f) for f in os.listdir(trace_dir) if f.endswith(".trace")
    )
    if not paths:
        raise ValueError(f"no .trace files found in {trace_dir}")
    groups: dict[tuple[str, str], list[tuple[str, dict, np.ndarray]]] = {}
    for path in paths:
        meta, trace = read_trace(path)
        key = (meta["suite"], meta["variant"])
        groups.setdefault(key, []).append((path, meta, trace.incumbent_curve()))

    rows = []
    suite_order = sorted({k[0] for k in groups})
    variant_order = [v for v in bo.VARIANTS if any(k[1] == v for k in groups)]
    for suite in suite_order:
        for variant in variant_order:
            if (suite, variant) not in groups:
                continue
            entries = groups[(suite, variant)]
            budgets = {curve.shape[0] for _, _, curve in entries}
            if len(budgets) != 1:
                offenders = ", ".join(
                    f"{p} (budget {c.shape[0]})" for p, _, c in entries
                )
                raise ValueError(f"mismatched budgets across traces: {offenders}")
            curves = np.vstack([c for _, _, c in entries])
            pcts = np.percentile(curves, [25, 50, 75], axis=0, method="linear")
            for it in range(curves.shape[1]):
                rows.append(
                    (suite, variant, it + 1, pcts[0, it], pcts[1, it], pcts[2, it])
                )
    if out_file:
        lines = ["suite,variant,iteration,p25,p50,p75"]
        for suite, variant, it, p25, p50, p75 in rows:
            lines.append(f"{suite},{variant},{it},{p25!r},{p50!r},{p75!r}")
        with open(out_file, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows


# -- demo ----------------------------------------------------------------------


def demo(out_file: str, seed: int = 0) -> None:
    """Acquisition sequences of vbo vs dbo on the two-Gaussian showcase, as CSV."""
    spec = two_gaussian_2d()
    lines = ["variant,event_kind,iteration,x0,x1,y"]
    for variant in ("vbo", "dbo"):
        config = bo.BoConfig(variant=variant, budget=19, seed=seed)
        trace = bo.run(spec, spec.domain, config)
        for e in trace.events:
            y = _format_value(e.y)
            lines.append(f"{variant},{e.kind},{e.iteration},{e.point[0]!r},{e.point[1]!r},{y}")
    with open(out_file, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# -- entry point ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgebo",
        description="Benchmark runner for boundary-aware Bayesian optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute seeded replicated optimization runs")
    p_run.add_argument("--config", help=f"JSON config file (overridden by ${CONFIG_ENV_VAR})")
    p_run.add_argument("--suite", choices=SUITES)
    p_run.add_argument("--variants", help="comma-separated subset of vbo,dbo,adbo")
    p_run.add_argument("--runs", type=int, dest="n_runs")
    p_run.add_argument("--budget", type=int, help="total evaluations incl. 2^d init")
    p_run.add_argument("--noise-std", type=float, dest="noise_std")
    p_run.add_argument("--epsilon-b", type=float, dest="epsilon_b")
    p_run.add_argument("--beta", type=float)
    p_run.add_argument("--seed", type=int, dest="base_seed")
    p_run.add_argument("--out", dest="out_dir")
    p_run.add_argument("--force", action="store_true", default=None)
    p_run.add_argument("--workers", type=int)

    p_agg = sub.add_parser("aggregate", help="aggregate traces into percentile curves")
    p_agg.add_argument("--in", dest="trace_dir", required=True)
    p_agg.add_argument("--out", dest="out_file", required=True)

    p_demo = sub.add_parser("demo", help="write the two-Gaussian acquisition comparison CSV")
    p_demo.add_argument("--out", dest="out_file", required=True)
    p_demo.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            overrides = {
                key: getattr(args, key)
                for key in (
                    "suite",
                    "variants",
                    "n_runs",
                    "budget",
                    "noise_std",
                    "epsilon_b",
                    "beta",
                    "base_seed",
                    "out_dir",
                    "force",
                    "workers",
                )
            }
            path = os.environ.get(CONFIG_ENV_VAR) or args.config
            config = parse_config(path, overrides)
            return run_experiment(config)
        if args.command == "aggregate":
            aggregate(args.trace_dir, args.out_file)
            return EXIT_OK
        if args.command == "demo":
            demo(args.out_file, args.seed)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
