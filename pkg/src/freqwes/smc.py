"""Weighted-particle representation of the posterior over omega.

Ensembles are immutable: ``bayes_update`` and ``maybe_resample`` return new
ones. Resampling is systematic, followed by Metropolis moves with a Gaussian
proposal whose target is the full posterior given the data history.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import kernels
from .likelihood import ExperimentRecord, LikelihoodModel

logger = logging.getLogger(__name__)

PRIOR_SUPPORT = (0.0, math.pi / 2)


class ConfigError(ValueError):
    """Invalid configuration value."""


class DegeneratePosteriorError(RuntimeError):
    """The data are impossible under every particle, or the ensemble collapsed."""


class ResamplerWarning(UserWarning):
    pass


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleEnsemble:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "locations", _frozen(self.locations))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.locations.ndim != 1 or self.locations.shape != self.weights.shape:
            raise ConfigError("locations and weights must be 1-d arrays of equal length")
        if len(self.locations) < 2:
            raise ConfigError("an ensemble needs at least 2 particles")

    @property
    def n_particles(self) -> int:
        return len(self.locations)

    def __eq__(self, other):
        if not isinstance(other, ParticleEnsemble):
            return NotImplemented
        return np.array_equal(self.locations, other.locations) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None


@dataclass
class DataHistory:
    """Append-only record list with array views for vectorised likelihoods."""

    records: List[ExperimentRecord] = field(default_factory=list)

    def __post_init__(self):
        self._cache = None

    def append(self, record: ExperimentRecord) -> None:
        self.records.append(record)
        self._cache = None

    def __len__(self):
        return len(self.records)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(times, shots, ones)`` as numpy arrays."""
        if self._cache is None:
            self._cache = (
                np.array([r.time for r in self.records], dtype=np.float64),
                np.array([r.shots for r in self.records], dtype=np.int64),
                np.array([r.ones for r in self.records], dtype=np.int64),
            )
        return self._cache


@dataclass(frozen=True)
class ResampleConfig:
    ess_threshold_fraction: float = 0.5
    mh_steps: int = 2
    proposal_scale: float = 0.1

    def __post_init__(self):
        if not 0 < self.ess_threshold_fraction <= 1:
            raise ConfigError("ess_threshold_fraction must lie in (0, 1]")
        if self.mh_steps < 1:
            raise ConfigError("mh_steps must be >= 1")
        if not self.proposal_scale > 0:
            raise ConfigError("proposal_scale must be positive")


def init_prior(K: int, rng: np.random.Generator, support=PRIOR_SUPPORT) -> ParticleEnsemble:
    """K particles uniform on ``]lo, hi]`` with equal weights."""
    if K < 2:
        raise ConfigError(f"K must be >= 2, got {K}")
    lo, hi = support
    # hi - U[0,1) * width lands in ]lo, hi]
    locations = hi - rng.random(K) * (hi - lo)
    return ParticleEnsemble(locations, np.full(K, 1.0 / K))


def bayes_update(
    ensemble: ParticleEnsemble, model: LikelihoodModel, record: ExperimentRecord
) -> ParticleEnsemble:
    """Reweight by the likelihood of ``record`` and renormalise."""
    loglik = kernels.record_loglik(
        ensemble.locations, record.time, record.shots, record.ones, model.kernel_tc
    )
    if not np.any(loglik):
        # uninformative record (e.g. t=0, x=0): keep the ensemble bit-identical
        return ensemble
    with np.errstate(divide="ignore"):
        logw = np.log(ensemble.weights) + loglik
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegeneratePosteriorError(
            f"record {record} has zero likelihood under every particle"
        )
    w = np.exp(logw - top)
    return ParticleEnsemble(ensemble.locations, w / w.sum())


def ess(ensemble: ParticleEnsemble) -> float:
    w = ensemble.weights
    return float(w.sum() ** 2 / np.dot(w, w))


def mean_std(ensemble: ParticleEnsemble) -> Tuple[float, float]:
    """Weighted mean and population standard deviation."""
    mean, var = _mean_var(ensemble.locations, ensemble.weights)
    return mean, math.sqrt(var)


def _mean_var(x, w):
    # Same centring as the utility kernels, so the t=0 utility is -Var up to summation order.
    total = w.sum()
    centre = np.dot(w, x)
    d = x - centre
    m = np.dot(w, d) / total
    var = np.dot(w, d * d) / total - m * m
    return float(centre + m), max(float(var), 0.0)


def variance(ensemble: ParticleEnsemble) -> float:
    return _mean_var(ensemble.locations, ensemble.weights)[1]


def systematic_resample(ensemble: ParticleEnsemble, rng: np.random.Generator) -> np.ndarray:
    """Return K resampled locations (low-variance scheme)."""
    idx = kernels.systematic_indices(ensemble.weights, rng.random())
    return ensemble.locations[idx]


def metropolis_moves(
    locations: np.ndarray,
    history: DataHistory,
    model: LikelihoodModel,
    scale: float,
    steps: int,
    rng: np.random.Generator,
    support=PRIOR_SUPPORT,
) -> Tuple[np.ndarray, float]:
    """Run ``steps`` Gaussian random-walk Metropolis steps per particle.

    Returns the moved locations and the overall acceptance rate.
    """
    lo, hi = support
    times, shots, ones = history.arrays()
    x = np.array(locations, dtype=np.float64)
    logp = kernels.history_loglik(x, times, shots, ones, model.kernel_tc)
    accepted = 0
    for _ in range(steps):
        proposal = x + scale * rng.standard_normal(len(x))
        inside = (proposal > lo) & (proposal <= hi)
        logp_new = np.full(len(x), -np.inf)
        if inside.any():
            logp_new[inside] = kernels.history_loglik(
                proposal[inside], times, shots, ones, model.kernel_tc
            )
        u = rng.random(len(x))
        with np.errstate(invalid="ignore", over="ignore"):
            accept = inside & (np.log(u) < logp_new - logp)
        x[accept] = proposal[accept]
        logp[accept] = logp_new[accept]
        accepted += int(accept.sum())
    return x, accepted / (steps * len(x))


def maybe_resample(
    ensemble: ParticleEnsemble,
    history: DataHistory,
    model: LikelihoodModel,
    cfg: ResampleConfig,
    rng: np.random.Generator,
) -> ParticleEnsemble:
    """Resample-move when the ESS drops below the configured fraction of K."""
    K = ensemble.n_particles
    if ess(ensemble) >= cfg.ess_threshold_fraction * K:
        return ensemble
    _, std = mean_std(ensemble)
    locations = systematic_resample(ensemble, rng)
    if std == 0.0:
        warnings.warn(
            "ensemble has zero spread; resampled without Metropolis moves",
            ResamplerWarning,
            stacklevel=2,
        )
    else:
        locations, rate = metropolis_moves(
            locations, history, model, cfg.proposal_scale * std, cfg.mh_steps, rng
        )
        logger.debug("resample-move: K=%d acceptance=%.3f", K, rate)
    return ParticleEnsemble(locations, np.full(K, 1.0 / K))
