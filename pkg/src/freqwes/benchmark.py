"""Multi-run benchmarks: paired frequencies, binned error curves, fits, costs.

Error curves use log-spaced CET bins. Inside a bin each run contributes the
root mean square of its normalised errors; runs are then combined with a
geometric mean (average in log space, exponentiate back).
"""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .likelihood import LikelihoodModel
from .simulate import (
    DEGENERATE,
    RunConfig,
    RunTrace,
    TrueSystem,
    normalized_error,
    run_estimation,
    write_trace,
)
from .smc import ConfigError, ResampleConfig
from .strategies import StrategyConfig, StrategyKind

logger = logging.getLogger(__name__)

ERROR_FLOOR = 1e-12
MAX_FAILURE_FRACTION = 0.10
KIND_ORDER = tuple(StrategyKind)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_runs: int = 100
    strategies: Tuple[StrategyConfig, ...] = field(
        default_factory=lambda: tuple(StrategyConfig(kind=k) for k in StrategyKind)
    )
    model: LikelihoodModel = field(default_factory=LikelihoodModel)
    cet_budget: float = 1e4
    bins: int = 30
    fit_window: float = 0.8
    master_seed: int = 0
    K: int = 2000
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    max_experiments: int = 10**6
    # "omega" (relative error) or "domain" (error / (pi/2))
    normalization: str = "omega"

    def __post_init__(self):
        object.__setattr__(
            self,
            "strategies",
            tuple(s if isinstance(s, StrategyConfig) else StrategyConfig(kind=s) for s in self.strategies),
        )
        if self.n_runs < 2:
            raise ConfigError("n_runs must be >= 2")
        if self.bins < 5:
            raise ConfigError("bins must be >= 5")
        if not 0 < self.fit_window <= 1:
            raise ConfigError("fit_window must lie in (0, 1]")
        if self.normalization not in ("omega", "domain"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        kinds = [s.kind for s in self.strategies]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("each strategy kind may appear once per benchmark")


@dataclass(frozen=True)
class ScalingCurve:
    cet: np.ndarray
    rmse: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cet", np.asarray(self.cet, dtype=np.float64))
        object.__setattr__(self, "rmse", np.asarray(self.rmse, dtype=np.float64))
        if self.cet.shape != self.rmse.shape:
            raise ValueError("cet and rmse must have equal length")
        if np.any(np.diff(self.cet) <= 0):
            raise ValueError("cet centres must be strictly increasing")

    def __len__(self):
        return len(self.cet)

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.cet.tolist(), self.rmse.tolist()))


@dataclass(frozen=True)
class FitResult:
    exponent: float
    multiplier: float
    residual: float
    n_points: int


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    omegas: np.ndarray
    traces: Dict[str, List[RunTrace]]

    def ok_traces(self, kind) -> List[RunTrace]:
        kind = StrategyKind.parse(kind).value
        return [t for t in self.traces[kind] if t.terminal_status != DEGENERATE and t.steps]

    def failures(self) -> Dict[str, List[int]]:
        return {
            k: [i for i, t in enumerate(ts) if t.terminal_status == DEGENERATE]
            for k, ts in self.traces.items()
        }


# -- seeding ---------------------------------------------------------------------------


def _derived_int(master_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_frequencies(master_seed: int, n_runs: int) -> np.ndarray:
    """Frequencies on ``]0, pi/2]``, one per run index, shared by all strategies."""
    out = np.empty(n_runs)
    for i in range(n_runs):
        u = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(i, 0))).random()
        out[i] = math.pi / 2 - u * (math.pi / 2)
    return out


def run_seed(master_seed: int, run_index: int, kind) -> int:
    kind = StrategyKind.parse(kind)
    return _derived_int(master_seed, run_index, 1 + KIND_ORDER.index(kind))


# -- orchestration --------------------------------------------------------------------------


def _one(args):
    omega, model, run_cfg = args
    return run_estimation(TrueSystem(float(omega), model), run_cfg)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def run_benchmark(cfg: BenchmarkConfig, workers: int = 1) -> BenchmarkResult:
    """Run ``n_runs`` paired runs for every strategy.

    Output is independent of ``workers``: each run's seed depends only on
    ``(master_seed, run_index, strategy)``.
    """
    omegas = run_frequencies(cfg.master_seed, cfg.n_runs)
    jobs = []
    for strategy in cfg.strategies:
        for i, omega in enumerate(omegas):
            run_cfg = RunConfig(
                strategy=strategy,
                K=cfg.K,
                resample=cfg.resample,
                cet_budget=cfg.cet_budget,
                max_experiments=cfg.max_experiments,
                seed=run_seed(cfg.master_seed, i, strategy.kind),
            )
            jobs.append((omega, cfg.model, run_cfg))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs, chunksize=1))
    else:
        results = [_one(j) for j in jobs]
    traces: Dict[str, List[RunTrace]] = {}
    for (_, _, run_cfg), trace in zip(jobs, results):
        traces.setdefault(run_cfg.strategy.kind.value, []).append(trace)
    return BenchmarkResult(cfg, omegas, traces)


# -- curves and fits ---------------------------------------------------------------------------


def trace_errors(trace: RunTrace, normalization: str = "omega") -> Tuple[np.ndarray, np.ndarray]:
    cet = np.array([s.cet for s in trace.steps])
    if normalization == "domain":
        err = np.array([abs(s.estimate - trace.omega_true) for s in trace.steps]) / (math.pi / 2)
    else:
        err = np.array([normalized_error(s, trace.omega_true) for s in trace.steps])
    return cet, err


def log_bin_edges(traces: Sequence[RunTrace], bins: int) -> np.ndarray:
    lo = min(t.steps[0].cet for t in traces)
    hi = max(t.steps[-1].cet for t in traces)
    if hi <= lo:
        hi = lo * 10.0
    edges = np.logspace(math.log10(lo), math.log10(hi), bins + 1)
    # logspace round-trips through log10; pin the ends so no point falls outside
    edges[0], edges[-1] = lo, hi
    return edges


def bin_index(cet: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin of each CET value; -1 outside the edges. The last edge is inclusive."""
    idx = np.searchsorted(edges, cet, side="right") - 1
    idx[cet == edges[-1]] = len(edges) - 2
    idx[(cet < edges[0]) | (cet > edges[-1])] = -1
    return idx


def bin_log_average_exp(
    traces: Sequence[RunTrace],
    bins: int = 30,
    edges: Optional[np.ndarray] = None,
    normalization: str = "omega",
) -> ScalingCurve:
    """Log-binned error curve: per-run RMS within a bin, geometric mean across runs."""
    traces = [t for t in traces if t.steps]
    if not traces:
        raise ValueError("no non-empty traces to bin")
    if edges is None:
        edges = log_bin_edges(traces, bins)
    n_bins = len(edges) - 1
    log_sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    clamped = 0
    for trace in traces:
        cet, err = trace_errors(trace, normalization)
        idx = bin_index(cet, edges)
        keep = idx >= 0
        sq = np.bincount(idx[keep], weights=err[keep] ** 2, minlength=n_bins)
        n = np.bincount(idx[keep], minlength=n_bins)
        has = n > 0
        rms = np.sqrt(sq[has] / n[has])
        clamped += int(np.sum(rms < ERROR_FLOOR))
        log_sums[has] += np.log(np.maximum(rms, ERROR_FLOOR))
        counts[has] += 1
    if clamped:
        logger.warning("%d bin errors clamped at %g before the log", clamped, ERROR_FLOOR)
    filled = counts > 0
    centres = np.sqrt(edges[:-1] * edges[1:])
    return ScalingCurve(centres[filled], np.exp(log_sums[filled] / counts[filled]))


def fit_loglog(curve: ScalingCurve, window: float = 0.8) -> FitResult:
    """Least squares line through the last ``window`` fraction of the curve in log10-log10."""
    n = len(curve)
    take = int(math.ceil(window * n - 1e-9))
    if take < 3:
        raise ValueError(f"need at least 3 points to fit, got {take}")
    x = np.log10(curve.cet[n - take:])
    y = np.log10(curve.rmse[n - take:])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return FitResult(float(slope), float(10.0**intercept), float(np.sqrt(np.mean(resid**2))), take)


def reference_lines(curve: ScalingCurve, decades: float = 3.0) -> Tuple[ScalingCurve, ScalingCurve]:
    """Slope -1/2 (SQL) and -1 (HL) lines anchored at the curve's first point."""
    if len(curve) == 0:
        raise ValueError("empty curve")
    c0, r0 = curve.cet[0], curve.rmse[0]
    if len(curve) > 1:
        cet = curve.cet
    else:
        cet = c0 * np.logspace(0.0, decades, 4)
    sql = ScalingCurve(cet, r0 * (cet / c0) ** -0.5)
    hl = ScalingCurve(cet, r0 * (cet / c0) ** -1.0)
    return sql, hl


def experiment_count_table(traces: Dict[str, Sequence[RunTrace]]) -> Dict[str, float]:
    """Mean final experiment count (measurement rounds) per strategy."""
    return {k: float(np.mean([t.n_experiments for t in ts])) for k, ts in traces.items() if ts}


# -- classical cost model ---------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Operation counts for K particles, M candidate controls, N experiments."""

    K: int
    M: int
    N: int

    def __post_init__(self):
        for name in ("K", "M", "N"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")

    @property
    def c1(self) -> int:
        """One Bayesian update."""
        return self.K

    @property
    def c2(self) -> int:
        """One expectation (weight, sum, normalise)."""
        return 3 * self.K

    @property
    def scenario_cost(self) -> int:
        """Conditional update + utility integral + outcome probability."""
        return self.c1 + 2 * self.c2


COST_KINDS = ("non_optimized", "global", "greedy", "wes", "awes", "sh", "pgh", "rts")


def predicted_cost(model: CostModel, kind: str) -> int:
    K, M, N = int(model.K), int(model.M), int(model.N)
    kind = kind.value if isinstance(kind, StrategyKind) else str(kind).lower()
    if kind in ("non_optimized", "pgh", "rts"):
        return N * K
    if kind == "global":
        return (7 * M * 2**N + N) * K
    if kind == "greedy":
        return (14 * M + 1) * N * K
    if kind in ("wes", "awes"):
        return 71 * N * K
    if kind == "sh":
        return 4 * N * K
    raise ConfigError(f"no cost formula for strategy {kind!r}")


def cost_table(model: CostModel) -> Dict[str, int]:
    return {k: predicted_cost(model, k) for k in COST_KINDS}


# -- reporting ------------------------------------------------------------------------


def common_edges(result: BenchmarkResult) -> np.ndarray:
    traces = [t for k in result.traces for t in result.ok_traces(k)]
    return log_bin_edges(traces, result.config.bins)


def curves(result: BenchmarkResult, edges: Optional[np.ndarray] = None) -> Dict[str, ScalingCurve]:
    out = {}
    for kind in result.traces:
        ok = result.ok_traces(kind)
        if ok:
            out[kind] = bin_log_average_exp(ok, result.config.bins, edges, result.config.normalization)
    return out


def summarize(result: BenchmarkResult) -> dict:
    """Fits, experiment counts and failure report for every strategy."""
    cfg = result.config
    cs = curves(result)
    counts = experiment_count_table(result.traces)
    fits = {}
    for kind, curve in cs.items():
        try:
            fit = fit_loglog(curve, cfg.fit_window)
            fits[kind] = {**asdict(fit), "mean_n_experiments": counts[kind]}
        except ValueError as exc:
            fits[kind] = {"error": str(exc), "mean_n_experiments": counts[kind]}
    failures = result.failures()
    failed = {
        k: len(v) / cfg.n_runs for k, v in failures.items() if len(v) / cfg.n_runs > MAX_FAILURE_FRACTION
    }
    return {"curves": cs, "fits": fits, "failures": failures, "failed_strategies": failed}


def benchmark_config_dict(cfg: BenchmarkConfig) -> dict:
    d = asdict(cfg)
    d["strategies"] = [
        {**asdict(s), "kind": s.kind.value} for s in cfg.strategies
    ]
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_outputs(result: BenchmarkResult, out_dir, cost: Optional[CostModel] = None, extra=None) -> dict:
    """Write traces/, curves/, fits.json, costs.json and report.json under ``out_dir``."""
    out = Path(out_dir)
    summary = summarize(result)
    for kind, traces in result.traces.items():
        for i, trace in enumerate(traces):
            write_trace(trace, out / "traces" / kind / f"{i}.csv")
    (out / "curves").mkdir(parents=True, exist_ok=True)
    for kind, curve in summary["curves"].items():
        lines = ["cet_center,rmse"] + [f"{c!r},{r!r}" for c, r in curve.points]
        (out / "curves" / f"{kind}.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "fits.json", summary["fits"])
    if cost is None:
        counts = experiment_count_table(result.traces)
        cost = CostModel(K=result.config.K, M=result.config.strategies[0].candidates_per_iter,
                         N=max(1, int(round(max(counts.values())))))
    costs = {"K": cost.K, "M": cost.M, "N": cost.N, "table": cost_table(cost)}
    _write_json(out / "costs.json", costs)
    report = {
        "config": benchmark_config_dict(result.config),
        "omegas": result.omegas.tolist(),
        "failures": summary["failures"],
        "failed_strategies": summary["failed_strategies"],
    }
    if extra:
        report.update(extra)
    _write_json(out / "report.json", report)
    return summary


__all__ = [
    "BenchmarkConfig",
    "BenchmarkResult",
    "CostModel",
    "FitResult",
    "ScalingCurve",
    "bin_log_average_exp",
    "cost_table",
    "experiment_count_table",
    "fit_loglog",
    "predicted_cost",
    "reference_lines",
    "run_benchmark",
    "write_outputs",
]
