"""Outcome probabilities of a precessing qubit measured after a wait time.

Outcome ``x = 0`` is the initial-state eigenvalue. In the ideal case::

    P(0 | omega; t) = cos^2(omega t / 2),   P(1 | omega; t) = sin^2(omega t / 2)

With a finite coherence time ``T`` the oscillation is damped towards the
maximally mixed state::

    P(0 | omega; t) = exp(-t/T) cos^2(omega t / 2) + (1 - exp(-t/T)) / 2
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels


class DomainError(ValueError):
    """Raised for non-finite or out-of-domain likelihood arguments."""


@dataclass(frozen=True)
class LikelihoodModel:
    """Measurement model; ``coherence_time=None`` means ideal dynamics."""

    coherence_time: Optional[float] = None

    def __post_init__(self):
        tc = self.coherence_time
        if tc is not None and not (np.isfinite(tc) and tc > 0):
            raise ValueError(f"coherence_time must be positive, got {tc!r}")

    @property
    def noisy(self) -> bool:
        return self.coherence_time is not None

    @property
    def kernel_tc(self) -> float:
        """Coherence time in kernel encoding (0.0 for ideal)."""
        return float(self.coherence_time) if self.coherence_time is not None else 0.0


IDEAL = LikelihoodModel()


@dataclass(frozen=True)
class ExperimentRecord:
    """``shots`` repetitions at evolution time ``time``, ``ones`` of them gave x=1."""

    time: float
    shots: int
    ones: int

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise DomainError(f"evolution time must be finite and >= 0, got {self.time!r}")
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if not 0 <= self.ones <= self.shots:
            raise ValueError(f"ones must lie in [0, {self.shots}], got {self.ones}")


def _check(omega, t):
    omega = np.asarray(omega, dtype=np.float64)
    if not np.all(np.isfinite(omega)) or not np.isfinite(t):
        raise DomainError("likelihood arguments must be finite")
    if np.any(omega < 0) or t < 0:
        raise DomainError("omega and t must be non-negative")
    return omega


def likelihood(model: LikelihoodModel, x: int, omega, t: float):
    """Probability of outcome ``x`` for frequency ``omega`` (scalar or array)."""
    if x not in (0, 1):
        raise DomainError(f"outcome must be 0 or 1, got {x!r}")
    arr = _check(omega, t)
    fn = kernels.prob_one if x == 1 else kernels.prob_zero
    p = fn(np.atleast_1d(arr), float(t), model.kernel_tc)
    return float(p[0]) if arr.ndim == 0 else p


def log_likelihood_of_record(model: LikelihoodModel, omega, record: ExperimentRecord):
    """``ones*log P(1) + (shots-ones)*log P(0)``; ``-inf`` for impossible data."""
    arr = _check(omega, record.time)
    out = kernels.record_loglik(
        np.atleast_1d(arr), record.time, record.shots, record.ones, model.kernel_tc
    )
    return float(out[0]) if arr.ndim == 0 else out
