"""Command line: ``freqwes {run,bench,calibrate,cost}``.

Settings come from built-in defaults, then an optional TOML file
(``--config``), then flags. The TOML file has one table per module::

    [likelihood]
    coherence_time = 500

    [strategy]
    strategy = "wes"
    candidates = 50

    [benchmark]
    strategies = "wes,awes,sh,pgh,rts"
    runs = 20

Keys are the flag names with dashes replaced by underscores.

Exit codes: 0 success, 2 usage, 3 output conflict, 4 runtime degeneracy.
"""

import argparse
import json
import logging
import math
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .benchmark import (
    BenchmarkConfig,
    CostModel,
    cost_table,
    default_workers,
    run_benchmark,
    write_outputs,
)
from .likelihood import LikelihoodModel
from .simulate import DEGENERATE, RunConfig, TrueSystem, run_estimation, write_trace
from .smc import ConfigError, ResampleConfig
from .strategies import StrategyConfig, StrategyKind, calibrate_multiplier

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_CONFLICT, EXIT_DEGENERATE = 0, 2, 3, 4

SECTIONS = {
    "likelihood": ("coherence_time",),
    "smc": ("particles", "ess_threshold", "mh_steps", "proposal_scale"),
    "strategy": (
        "strategy", "heuristic_multiplier", "sh_multiplier", "pgh_multiplier",
        "candidates", "hit_rank", "hits_to_expand", "warmup_shots", "warmup_time",
        "initial_upper", "shots", "ess_target", "rts_cap", "utility",
    ),
    "run": ("omega", "seed", "cet_budget", "max_experiments", "out", "force"),
    "benchmark": ("strategies", "runs", "bins", "fit_window", "workers", "normalization"),
    "calibrate": ("kind", "grid", "calibration_runs", "calibration_budget"),
    "cost": ("K", "N", "M"),
}

DEFAULTS = {
    "coherence_time": None,
    "particles": 2000,
    "ess_threshold": 0.5,
    "mh_steps": 2,
    "proposal_scale": 0.1,
    "strategy": None,
    "heuristic_multiplier": 1.0,
    "sh_multiplier": None,
    "pgh_multiplier": None,
    "candidates": 50,
    "hit_rank": 3,
    "hits_to_expand": 3,
    "warmup_shots": 10,
    "warmup_time": 1.0,
    "initial_upper": 100.0,
    "shots": None,
    "ess_target": 0.5,
    "rts_cap": None,
    "utility": "variance",
    "omega": None,
    "seed": 0,
    "cet_budget": 1e4,
    "max_experiments": 10**6,
    "out": None,
    "force": False,
    "strategies": "wes,awes,sh,pgh,rts",
    "runs": 100,
    "bins": 30,
    "fit_window": 0.8,
    "workers": None,
    "normalization": "omega",
    "kind": None,
    "grid": "0.125,0.25,0.5,1,2",
    "calibration_runs": 10,
    "calibration_budget": 1e3,
    "K": None,
    "N": None,
    "M": 50,
}


class UsageError(Exception):
    pass


def _float_list(text):
    if isinstance(text, (list, tuple)):
        values = [float(v) for v in text]
    else:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    return values


def _str_list(text):
    if isinstance(text, (list, tuple)):
        return [str(v).strip() for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def load_config_file(path) -> dict:
    """Flatten a sectioned TOML file into ``{key: value}``."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    flat = {}
    for section, body in raw.items():
        if section not in SECTIONS or not isinstance(body, dict):
            raise UsageError(f"unknown config section [{section}]")
        for key, value in body.items():
            if key not in SECTIONS[section]:
                raise UsageError(f"unknown key {key!r} in [{section}]")
            flat[key] = value
    return flat


def effective_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            settings.update(load_config_file(args.config))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            settings[key] = value
    return settings


# -- builders ------------------------------------------------------------------------


def build_model(s) -> LikelihoodModel:
    tc = s["coherence_time"]
    return LikelihoodModel(None if tc in (None, 0) else float(tc))


def build_resample(s) -> ResampleConfig:
    return ResampleConfig(float(s["ess_threshold"]), int(s["mh_steps"]), float(s["proposal_scale"]))


def build_strategy(s, kind) -> StrategyConfig:
    kind = StrategyKind.parse(kind)
    multiplier = float(s["heuristic_multiplier"])
    if kind is StrategyKind.SH and s["sh_multiplier"] is not None:
        multiplier = float(s["sh_multiplier"])
    if kind is StrategyKind.PGH and s["pgh_multiplier"] is not None:
        multiplier = float(s["pgh_multiplier"])
    return StrategyConfig(
        kind=kind,
        candidates_per_iter=int(s["candidates"]),
        hit_rank=int(s["hit_rank"]),
        hits_to_expand=int(s["hits_to_expand"]),
        warmup_shots=int(s["warmup_shots"]),
        warmup_time=float(s["warmup_time"]),
        initial_upper=float(s["initial_upper"]),
        shots_per_measurement=None if s["shots"] is None else int(s["shots"]),
        heuristic_multiplier=multiplier,
        rts_cap=None if s["rts_cap"] is None else float(s["rts_cap"]),
        ess_target_fraction=float(s["ess_target"]),
        utility=str(s["utility"]),
    )


def prepare_out(path, force) -> Path:
    out = Path(path)
    occupied = any(out.iterdir()) if out.is_dir() else out.exists()
    if occupied:
        if not force:
            raise FileExistsError(f"{out} exists; pass --force to overwrite")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _settings_echo(s) -> dict:
    return {k: v for k, v in sorted(s.items())}


# -- subcommands ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    s = effective_settings(args)
    if not s["strategy"]:
        raise UsageError("run needs --strategy")
    model = build_model(s)
    strategy = build_strategy(s, s["strategy"])
    rng = np.random.default_rng(np.random.SeedSequence(int(s["seed"]), spawn_key=(0,)))
    omega = s["omega"]
    if omega is None:
        omega = math.pi / 2 - rng.random() * (math.pi / 2)
    cfg = RunConfig(
        strategy=strategy,
        K=int(s["particles"]),
        resample=build_resample(s),
        cet_budget=float(s["cet_budget"]),
        max_experiments=int(s["max_experiments"]),
        seed=int(s["seed"]),
    )
    out = prepare_out(s["out"] or "run_out", s["force"])
    trace = run_estimation(TrueSystem(float(omega), model), cfg)
    sidecar = write_trace(trace, out / "trace.csv")
    meta = json.loads(sidecar.read_text())
    meta["settings"] = _settings_echo(s)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    final = trace.final
    if final is not None:
        print(
            f"{strategy.kind.value}: omega={trace.omega_true:.10g} estimate={final.estimate:.10g} "
            f"std={final.std:.3g} cet={final.cet:.6g} experiments={final.n_experiments} "
            f"status={trace.terminal_status}"
        )
    return EXIT_DEGENERATE if trace.terminal_status == DEGENERATE else EXIT_OK


def cmd_bench(args) -> int:
    s = effective_settings(args)
    kinds = _str_list(s["strategies"])
    if not kinds:
        raise UsageError("--strategies is empty")
    strategies = tuple(build_strategy(s, k) for k in kinds)
    cfg = BenchmarkConfig(
        n_runs=int(s["runs"]),
        strategies=strategies,
        model=build_model(s),
        cet_budget=float(s["cet_budget"]),
        bins=int(s["bins"]),
        fit_window=float(s["fit_window"]),
        master_seed=int(s["seed"]),
        K=int(s["particles"]),
        resample=build_resample(s),
        max_experiments=int(s["max_experiments"]),
        normalization=str(s["normalization"]),
    )
    out = prepare_out(s["out"] or "bench_out", s["force"])
    workers = int(s["workers"]) if s["workers"] else default_workers()
    result = run_benchmark(cfg, workers=workers)
    summary = write_outputs(result, out, extra={"settings": _settings_echo(s)})
    print(f"{'strategy':<8} {'exponent':>9} {'multiplier':>11} {'residual':>9} {'mean N':>9} failures")
    for kind, fit in summary["fits"].items():
        n_fail = len(summary["failures"].get(kind, []))
        if "error" in fit:
            print(f"{kind:<8} {'-':>9} {'-':>11} {'-':>9} {fit['mean_n_experiments']:>9.1f} {n_fail}")
        else:
            print(
                f"{kind:<8} {fit['exponent']:>9.3f} {fit['multiplier']:>11.4g} "
                f"{fit['residual']:>9.3f} {fit['mean_n_experiments']:>9.1f} {n_fail}"
            )
    if summary["failed_strategies"]:
        print(f"strategies over the failure limit: {summary['failed_strategies']}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_calibrate(args) -> int:
    s = effective_settings(args)
    if not s["kind"]:
        raise UsageError("calibrate needs --kind")
    grid = _float_list(s["grid"])
    if not grid:
        raise UsageError("--grid is empty")
    if any(not c > 0 for c in grid):
        raise UsageError("--grid values must be positive")
    model = build_model(s)
    base = build_strategy(s, s["kind"])
    if base.kind not in (StrategyKind.SH, StrategyKind.PGH):
        raise UsageError("--kind must be sh or pgh")
    rng = np.random.default_rng(np.random.SeedSequence(int(s["seed"])))
    chosen = calibrate_multiplier(
        base.kind, model, int(s["calibration_runs"]), grid, rng,
        cet_budget=float(s["calibration_budget"]), n_particles=int(s["particles"]), base=base,
    )
    print(f"{base.kind.value} multiplier: {chosen!r}")
    out = Path(s["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "kind": base.kind.value,
        "multiplier": chosen,
        "grid": grid,
        "coherence_time": model.coherence_time,
        "settings": _settings_echo(s),
    }
    (out / "calibration.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_cost(args) -> int:
    s = effective_settings(args)
    missing = [f"--{k}" for k in ("K", "N", "M") if s[k] is None]
    if missing:
        raise UsageError(f"cost needs {', '.join(missing)}")
    try:
        model = CostModel(K=int(s["K"]), M=int(s["M"]), N=int(s["N"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = cost_table(model)
    width = max(len(k) for k in table)
    print(f"K={model.K} M={model.M} N={model.N}")
    for kind, value in table.items():
        print(f"{kind:<{width}} {value}")
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        payload = {**asdict(model), "table": table}
        (out / "costs.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _common(p):
    p.add_argument("--config", help="TOML settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--particles", type=_positive_int, help="number of particles K")
    p.add_argument("--coherence-time", type=_positive_float)
    p.add_argument("--cet-budget", type=_positive_float)
    p.add_argument("--max-experiments", type=_positive_int)
    p.add_argument("--ess-threshold", type=_positive_float)
    p.add_argument("--mh-steps", type=_positive_int)
    p.add_argument("--proposal-scale", type=_positive_float)
    p.add_argument("--heuristic-multiplier", type=_positive_float)
    p.add_argument("--sh-multiplier", type=_positive_float)
    p.add_argument("--pgh-multiplier", type=_positive_float)
    p.add_argument("--candidates", type=_positive_int)
    p.add_argument("--hit-rank", type=_positive_int)
    p.add_argument("--hits-to-expand", type=_positive_int)
    p.add_argument("--warmup-shots", type=_positive_int)
    p.add_argument("--warmup-time", type=_positive_float)
    p.add_argument("--initial-upper", type=_positive_float)
    p.add_argument("--shots", type=_positive_int)
    p.add_argument("--ess-target", type=_positive_float)
    p.add_argument("--rts-cap", type=_positive_float)
    p.add_argument("--utility", choices=["variance", "variance_cet2"])
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqwes", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("run", help="one estimation run, trace to CSV + JSON")
    _common(p)
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind])
    p.add_argument("--omega", type=_positive_float, help="true frequency in ]0, pi/2]")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="multi-run benchmark with curves and fits")
    _common(p)
    p.add_argument("--strategies", help="comma separated, e.g. wes,awes,sh,pgh,rts")
    p.add_argument("--runs", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--fit-window", type=_positive_float)
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--normalization", choices=["omega", "domain"])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="pick the sh/pgh multiplier on a grid")
    _common(p)
    p.add_argument("--kind", choices=["sh", "pgh"])
    p.add_argument("--grid", help="comma separated multipliers")
    p.add_argument("--calibration-runs", type=_positive_int)
    p.add_argument("--calibration-budget", type=_positive_float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("cost", help="closed-form classical cost table")
    p.add_argument("--config")
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileExistsError as exc:
        print(f"freqwes: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"freqwes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
