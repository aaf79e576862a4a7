"""Evolution-time choosers: WES, aWES, sigma heuristic, particle guess, random.

WES scores a fixed number of random candidate times inside a search window
and keeps the one with the best look-ahead utility. When the winner lands
among the largest candidates often enough, the window moves up and doubles.
aWES is the same machine scored by closeness of the expected ESS to a target.
"""

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .likelihood import LikelihoodModel
from .smc import ConfigError, DataHistory, ParticleEnsemble, mean_std

logger = logging.getLogger(__name__)

WINDOW_CAP = 1e12
PGH_MAX_REDRAWS = 50


class DegenerateDistributionError(RuntimeError):
    """A heuristic cannot produce a finite time from the current ensemble."""


class StrategyKind(str, enum.Enum):
    WES = "wes"
    AWES = "awes"
    SH = "sh"
    PGH = "pgh"
    RTS = "rts"

    @classmethod
    def parse(cls, value) -> "StrategyKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown strategy {value!r}") from None


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind = StrategyKind.WES
    candidates_per_iter: int = 50
    hit_rank: int = 3
    hits_to_expand: int = 3
    warmup_shots: int = 10
    warmup_time: float = 1.0
    initial_upper: float = 100.0
    shots_per_measurement: Optional[int] = None
    heuristic_multiplier: float = 1.0
    rts_cap: Optional[float] = None
    ess_target_fraction: float = 0.5
    # "variance" or "variance_cet2" (expected variance times squared CET)
    utility: str = "variance"

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind.parse(self.kind))
        for name in ("candidates_per_iter", "hit_rank", "hits_to_expand", "warmup_shots"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hit_rank > self.candidates_per_iter:
            raise ConfigError("hit_rank cannot exceed candidates_per_iter")
        if self.shots_per_measurement is not None and self.shots_per_measurement < 1:
            raise ConfigError("shots_per_measurement must be positive")
        if not (self.warmup_time > 0 and self.initial_upper > 0):
            raise ConfigError("warmup_time and initial_upper must be positive")
        if not self.heuristic_multiplier > 0:
            raise ConfigError("heuristic_multiplier must be positive")
        if self.rts_cap is not None and not self.rts_cap > 0:
            raise ConfigError("rts_cap must be positive")
        if not 0 < self.ess_target_fraction <= 1:
            raise ConfigError("ess_target_fraction must lie in (0, 1]")
        if self.utility not in ("variance", "variance_cet2"):
            raise ConfigError(f"unknown utility {self.utility!r}")

    @property
    def shots(self) -> int:
        if self.shots_per_measurement is not None:
            return self.shots_per_measurement
        return 10 if self.kind in (StrategyKind.WES, StrategyKind.AWES) else 1

    @property
    def uses_window(self) -> bool:
        return self.kind in (StrategyKind.WES, StrategyKind.AWES)

    def cap_for(self, model: LikelihoodModel) -> float:
        if self.rts_cap is not None:
            return self.rts_cap
        return model.coherence_time if model.noisy else 100.0


@dataclass(frozen=True)
class WindowState:
    lower: float
    upper: float
    hits: int = 0

    def __post_init__(self):
        if not 0 <= self.lower < self.upper:
            raise ConfigError(f"invalid window ]{self.lower}, {self.upper}]")
        if self.hits < 0:
            raise ConfigError("hits must be non-negative")


@dataclass(frozen=True)
class CandidateEvaluation:
    time: float
    utility: float
    time_rank_desc: int


# -- utilities ---------------------------------------------------------------


def expected_variance_utility(ensemble: ParticleEnsemble, model: LikelihoodModel, t: float) -> float:
    """``-sum_x P(x;t) Var(omega | x; t)`` for a single-shot look-ahead."""
    return float(variance_utilities(ensemble, model, np.array([t], dtype=np.float64))[0])


def expected_ess_utility(
    ensemble: ParticleEnsemble, model: LikelihoodModel, t: float, target: float
) -> float:
    """``-|E_x[ESS after x] - target*K|``; ``target`` is a fraction of K."""
    return float(ess_utilities(ensemble, model, np.array([t], dtype=np.float64), target)[0])


def variance_utilities(ensemble, model, times):
    return kernels.variance_utilities(
        ensemble.locations, ensemble.weights, np.asarray(times, dtype=np.float64), model.kernel_tc
    )


def ess_utilities(ensemble, model, times, target):
    return kernels.ess_utilities(
        ensemble.locations,
        ensemble.weights,
        np.asarray(times, dtype=np.float64),
        model.kernel_tc,
        target * ensemble.n_particles,
    )


# -- WES ---------------------------------------------------------------------


def sample_candidates(window: WindowState, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. uniform draws on ``]lower, upper]``."""
    return window.upper - rng.random(n) * (window.upper - window.lower)


def select_candidate(times: np.ndarray, utilities: np.ndarray) -> int:
    """Index of the best utility; ties go to the smallest time."""
    best = np.max(utilities)
    tied = np.flatnonzero(utilities == best)
    return int(tied[np.argmin(times[tied])])


def advance_window(window: WindowState, hit: bool, cfg: StrategyConfig) -> WindowState:
    hits = window.hits + int(hit)
    if hits < cfg.hits_to_expand:
        return replace(window, hits=hits)
    upper = 2.0 * window.upper
    if upper > WINDOW_CAP:
        logger.warning("window upper bound capped at %.3g", WINDOW_CAP)
        return WindowState(window.lower, window.upper, 0)
    return WindowState(window.upper, upper, 0)


def wes_choose(
    ensemble: ParticleEnsemble,
    model: LikelihoodModel,
    window: WindowState,
    cfg: StrategyConfig,
    rng: np.random.Generator,
    utility_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[float, WindowState, List[CandidateEvaluation]]:
    """One WES/aWES iteration.

    Parameters
    ----------
    utility_fn : callable, optional
        Maps an array of candidate times to utilities. Defaults to the
        expected-variance utility (WES) or expected-ESS utility (aWES).

    Returns
    -------
    t : float
        Chosen evolution time, inside the window current at entry.
    new_window : WindowState
    evaluations : list of CandidateEvaluation
        One per candidate, with rank 1 for the largest time.
    """
    times = sample_candidates(window, cfg.candidates_per_iter, rng)
    if utility_fn is None:
        utility_fn = default_utility(ensemble, model, cfg)
    utilities = np.asarray(utility_fn(times), dtype=np.float64)
    best = select_candidate(times, utilities)
    order = np.argsort(-times, kind="stable")
    ranks = np.empty(len(times), dtype=np.int64)
    ranks[order] = np.arange(1, len(times) + 1)
    hit = ranks[best] <= cfg.hit_rank
    evaluations = [
        CandidateEvaluation(float(t), float(u), int(r)) for t, u, r in zip(times, utilities, ranks)
    ]
    return float(times[best]), advance_window(window, hit, cfg), evaluations


def default_utility(ensemble, model, cfg: StrategyConfig, cet: float = 0.0):
    if cfg.kind is StrategyKind.AWES:
        return lambda times: ess_utilities(ensemble, model, times, cfg.ess_target_fraction)
    if cfg.utility == "variance_cet2":
        shots = cfg.shots
        return lambda times: variance_utilities(ensemble, model, times) * (cet + shots * times) ** 2
    return lambda times: variance_utilities(ensemble, model, times)


# -- heuristics ----------------------------------------------------------------


def sh_choose(ensemble: ParticleEnsemble, cfg: StrategyConfig) -> float:
    """``c / sigma`` of the current ensemble."""
    _, std = mean_std(ensemble)
    if not std > 0:
        raise DegenerateDistributionError("ensemble standard deviation is zero")
    t = cfg.heuristic_multiplier / std
    if not math.isfinite(t):
        raise DegenerateDistributionError("sigma heuristic produced a non-finite time")
    return t


def pgh_choose(ensemble: ParticleEnsemble, cfg: StrategyConfig, rng: np.random.Generator) -> float:
    """``c / |a - b|`` for two particles drawn by weight."""
    K = ensemble.n_particles
    for _ in range(1 + PGH_MAX_REDRAWS):
        i, j = rng.choice(K, size=2, p=ensemble.weights)
        gap = abs(ensemble.locations[i] - ensemble.locations[j])
        if gap > 0:
            return cfg.heuristic_multiplier / gap
    raise DegenerateDistributionError(
        f"particle guess drew coincident particles {PGH_MAX_REDRAWS} times"
    )


def rts_schedule(n: int, cap: float, rng: np.random.Generator) -> np.ndarray:
    """n uniform times on ``]0, cap]`` in increasing order."""
    if n < 1 or not cap > 0:
        raise ConfigError("rts_schedule needs n >= 1 and cap > 0")
    return np.sort(cap - rng.random(n) * cap)


def rts_schedule_for_budget(budget: float, cap: float, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw uniform times until ``shots * sum`` reaches ``budget``, sorted ascending."""
    drawn: List[float] = []
    total = 0.0
    while total < budget:
        block = cap - rng.random(256) * cap
        for t in block:
            drawn.append(float(t))
            total += shots * t
            if total >= budget:
                break
    return np.sort(np.array(drawn))


# -- run-loop adapters -------------------------------------------------------------


class Chooser:
    """Stateful per-run wrapper exposing the common ``choose`` contract."""

    warmup: Sequence[Tuple[float, int]] = ()

    def choose(self, ensemble, history: DataHistory, cet: float, rng) -> Tuple[float, int]:
        raise NotImplementedError


class WindowChooser(Chooser):
    def __init__(self, cfg: StrategyConfig, model: LikelihoodModel):
        self.cfg = cfg
        self.model = model
        self.window = WindowState(0.0, cfg.initial_upper, 0)
        self.warmup = [(cfg.warmup_time, 1)] * cfg.warmup_shots
        self.upper_bounds = [self.window.upper]
        self.n_candidates = []

    def choose(self, ensemble, history, cet, rng):
        utility = default_utility(ensemble, self.model, self.cfg, cet)
        t, self.window, evals = wes_choose(
            ensemble, self.model, self.window, self.cfg, rng, utility_fn=utility
        )
        self.upper_bounds.append(self.window.upper)
        self.n_candidates.append(len(evals))
        return t, self.cfg.shots


class SigmaChooser(Chooser):
    def __init__(self, cfg):
        self.cfg = cfg

    def choose(self, ensemble, history, cet, rng):
        return sh_choose(ensemble, self.cfg), self.cfg.shots


class ParticleGuessChooser(Chooser):
    def __init__(self, cfg):
        self.cfg = cfg

    def choose(self, ensemble, history, cet, rng):
        return pgh_choose(ensemble, self.cfg, rng), self.cfg.shots


class RandomTimesChooser(Chooser):
    def __init__(self, cfg: StrategyConfig, model: LikelihoodModel, cet_budget: float):
        self.cfg = cfg
        self.cap = cfg.cap_for(model)
        self.budget = cet_budget
        self.schedule = None
        self.position = 0

    def choose(self, ensemble, history, cet, rng):
        if self.schedule is None or self.position >= len(self.schedule):
            # Remaining budget is rescheduled; only reached on the first call
            # unless the caller keeps going past the budget.
            remaining = max(self.budget - cet, self.cap)
            self.schedule = rts_schedule_for_budget(remaining, self.cap, self.cfg.shots, rng)
            self.position = 0
        t = float(self.schedule[self.position])
        self.position += 1
        return t, self.cfg.shots


def make_chooser(cfg: StrategyConfig, model: LikelihoodModel, cet_budget: float) -> Chooser:
    kind = cfg.kind
    if kind in (StrategyKind.WES, StrategyKind.AWES):
        return WindowChooser(cfg, model)
    if kind is StrategyKind.SH:
        return SigmaChooser(cfg)
    if kind is StrategyKind.PGH:
        return ParticleGuessChooser(cfg)
    return RandomTimesChooser(cfg, model, cet_budget)


def calibrate_multiplier(
    kind,
    model: LikelihoodModel,
    calibration_runs: int,
    grid: Sequence[float],
    rng: np.random.Generator,
    cet_budget: float = 1e3,
    n_particles: int = 1000,
    base: Optional[StrategyConfig] = None,
) -> float:
    """Pick the heuristic multiplier with the lowest final normalised RMSE.

    Every grid value is scored on the same ``calibration_runs`` frequencies
    and run seeds, so the comparison is paired.
    """
    from .simulate import RunConfig, TrueSystem, run_estimation

    kind = StrategyKind.parse(kind)
    if kind not in (StrategyKind.SH, StrategyKind.PGH):
        raise ConfigError("calibration applies to the sh and pgh heuristics only")
    grid = [float(c) for c in grid]
    if not grid:
        raise ConfigError("calibration grid is empty")
    if len(grid) == 1:
        return grid[0]
    base = base or StrategyConfig(kind=kind)
    omegas = math.pi / 2 - rng.random(calibration_runs) * (math.pi / 2)
    seeds = rng.integers(0, 2**63 - 1, size=calibration_runs)
    scores = []
    for c in grid:
        strategy = replace(base, kind=kind, heuristic_multiplier=c)
        log_err = []
        for omega, seed in zip(omegas, seeds):
            cfg = RunConfig(strategy=strategy, K=n_particles, cet_budget=cet_budget, seed=int(seed))
            trace = run_estimation(TrueSystem(float(omega), model), cfg)
            if trace.terminal_status == "degenerate" or not trace.steps:
                err = 1.0
            else:
                err = abs(trace.steps[-1].estimate - omega) / omega
            log_err.append(math.log(max(err, 1e-12)))
        # Same statistic as one bin of the benchmark curves: geometric mean.
        scores.append(math.exp(float(np.mean(log_err))))
        logger.info("calibrate %s c=%g rmse=%.4g", kind.value, c, scores[-1])
    return grid[int(np.argmin(scores))]
