"""Synthetic qubit and the adaptive estimation loop.

One run: flat prior, optional warm-up, then repeat {choose time, measure,
update, resample if needed} until the cumulative evolution time (CET, the sum
of time * shots) reaches the budget. An experiment is one measurement round at
a single chosen time, whatever its shot count.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .likelihood import ExperimentRecord, LikelihoodModel, likelihood
from .smc import (
    PRIOR_SUPPORT,
    ConfigError,
    DataHistory,
    DegeneratePosteriorError,
    ResampleConfig,
    bayes_update,
    ess,
    init_prior,
    maybe_resample,
    mean_std,
)
from .strategies import Chooser, DegenerateDistributionError, StrategyConfig, make_chooser

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "cet", "t_chosen", "shots", "ones", "estimate", "std", "ess", "n_experiments")

BUDGET_REACHED = "budget_reached"
MAX_EXPERIMENTS = "max_experiments"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class TrueSystem:
    omega_true: float
    model: LikelihoodModel = field(default_factory=LikelihoodModel)

    def __post_init__(self):
        lo, hi = PRIOR_SUPPORT
        if not lo < self.omega_true <= hi:
            raise ConfigError(f"omega_true must lie in ]0, pi/2], got {self.omega_true!r}")


@dataclass(frozen=True)
class RunConfig:
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    K: int = 2000
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    cet_budget: float = 1e4
    max_experiments: int = 10**6
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if not self.cet_budget > 0 or self.max_experiments < 1:
            raise ConfigError("cet_budget and max_experiments must be positive")


@dataclass(frozen=True)
class TraceStep:
    cet: float
    estimate: float
    std: float
    ess: float
    n_experiments: int
    t_chosen: float
    shots: int
    ones: int


@dataclass
class RunTrace:
    omega_true: float
    model: LikelihoodModel
    config: RunConfig
    steps: List[TraceStep] = field(default_factory=list)
    terminal_status: str = BUDGET_REACHED
    diagnostic: str = ""
    window_uppers: List[float] = field(default_factory=list)
    candidates_per_iter: List[int] = field(default_factory=list)

    @property
    def final(self) -> Optional[TraceStep]:
        return self.steps[-1] if self.steps else None

    @property
    def n_experiments(self) -> int:
        return self.steps[-1].n_experiments if self.steps else 0


def simulate_measurement(system: TrueSystem, t: float, shots: int, rng: np.random.Generator) -> ExperimentRecord:
    """Binomial sample of ``shots`` outcomes at time ``t``."""
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    p1 = likelihood(system.model, 1, system.omega_true, t)
    ones = int(rng.binomial(shots, min(max(p1, 0.0), 1.0)))
    return ExperimentRecord(float(t), int(shots), ones)


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def run_estimation(system: TrueSystem, cfg: RunConfig, chooser: Optional[Chooser] = None) -> RunTrace:
    """Execute one adaptive estimation run and return its trace."""
    rng = make_rng(cfg.seed)
    model = system.model
    chooser = chooser or make_chooser(cfg.strategy, model, cfg.cet_budget)
    trace = RunTrace(system.omega_true, model, cfg)

    ensemble = init_prior(cfg.K, rng)
    history = DataHistory()
    cet = 0.0
    n_exp = 0

    def measure(t, shots):
        nonlocal ensemble, cet, n_exp
        record = simulate_measurement(system, t, shots, rng)
        history.append(record)
        ensemble = bayes_update(ensemble, model, record)
        current_ess = ess(ensemble)
        estimate, std = mean_std(ensemble)
        ensemble = maybe_resample(ensemble, history, model, cfg.resample, rng)
        cet += record.time * record.shots
        n_exp += 1
        trace.steps.append(
            TraceStep(cet, estimate, std, current_ess, n_exp, record.time, record.shots, record.ones)
        )

    def done():
        if cet >= cfg.cet_budget:
            trace.terminal_status = BUDGET_REACHED
            return True
        if n_exp >= cfg.max_experiments:
            trace.terminal_status = MAX_EXPERIMENTS
            return True
        return False

    try:
        for t, shots in chooser.warmup:
            if done():
                break
            measure(t, shots)
        while not done():
            t, shots = chooser.choose(ensemble, history, cet, rng)
            measure(t, shots)
    except (DegeneratePosteriorError, DegenerateDistributionError) as exc:
        trace.terminal_status = DEGENERATE
        trace.diagnostic = str(exc)
        logger.warning("run degenerated (omega=%.6g): %s", system.omega_true, exc)

    trace.window_uppers = list(getattr(chooser, "upper_bounds", []))
    trace.candidates_per_iter = list(getattr(chooser, "n_candidates", []))
    return trace


# -- serialisation ---------------------------------------------------------------


def _fmt(value):
    # repr() of a Python float is the shortest round-trip string.
    return repr(float(value)) if isinstance(value, float) else str(value)


def trace_rows(trace: RunTrace):
    for i, s in enumerate(trace.steps):
        yield (i, s.cet, s.t_chosen, s.shots, s.ones, s.estimate, s.std, s.ess, s.n_experiments)


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["strategy"]["kind"] = cfg.strategy.kind.value
    return d


def write_trace(trace: RunTrace, csv_path) -> Path:
    """Write ``<name>.csv`` plus a ``<name>.json`` sidecar next to it."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace_rows(trace):
            writer.writerow([_fmt(v) for v in row])
    sidecar = {
        "config": config_dict(trace.config),
        "seed": trace.config.seed,
        "omega_true": trace.omega_true,
        "coherence_time": trace.model.coherence_time,
        "terminal_status": trace.terminal_status,
        "diagnostic": trace.diagnostic,
    }
    json_path = csv_path.with_suffix(".json")
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return json_path


def read_trace_csv(csv_path) -> List[dict]:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"step", "shots", "ones", "n_experiments"}
    return [{k: (int(v) if k in ints else float(v)) for k, v in row.items()} for row in rows]


def normalized_error(step: TraceStep, omega_true: float) -> float:
    """``|estimate - omega| / omega``."""
    if not omega_true > 0:
        raise ConfigError("omega_true must be positive")
    return abs(step.estimate - omega_true) / omega_true


__all__ = [
    "BUDGET_REACHED",
    "DEGENERATE",
    "MAX_EXPERIMENTS",
    "RunConfig",
    "RunTrace",
    "TraceStep",
    "TrueSystem",
    "make_rng",
    "normalized_error",
    "read_trace_csv",
    "run_estimation",
    "simulate_measurement",
    "write_trace",
]
