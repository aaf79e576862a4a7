"""Backend selection for the hot loops.

Set ``FREQWES_BACKEND=numpy`` to force the pure-numpy path; the default is
``numba`` when it imports, otherwise numpy. The choice is made once at import.
Evaluations whose phase ``omega*t`` may exceed ``PHASE_REDUCTION_THRESHOLD``
always go through numpy, which reduces the phase in extended precision.
"""

import logging
import os

import numpy as np

from . import _numpy_kernels as _np_k
from ._numpy_kernels import PHASE_REDUCTION_THRESHOLD, prob_one, prob_zero

logger = logging.getLogger(__name__)

__all__ = [
    "BACKEND",
    "PHASE_REDUCTION_THRESHOLD",
    "ess_utilities",
    "history_loglik",
    "prob_one",
    "prob_zero",
    "record_loglik",
    "systematic_indices",
    "variance_utilities",
]


def _select_backend():
    requested = os.environ.get("FREQWES_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"FREQWES_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", None
    try:
        from . import _numba_kernels
    except ImportError:  # pragma: no cover - numba is a hard dependency
        logger.warning("numba unavailable, falling back to numpy kernels")
        return "numpy", None
    return "numba", _numba_kernels


BACKEND, _nb_k = _select_backend()


def _fast(omegas, max_t):
    if _nb_k is None:
        return False
    top = float(np.max(np.abs(omegas), initial=0.0)) * float(max_t)
    return top <= PHASE_REDUCTION_THRESHOLD


def record_loglik(omegas, t, shots, ones, coherence_time):
    if _fast(omegas, t):
        return _nb_k.record_loglik(omegas, t, shots, ones, coherence_time)
    return _np_k.record_loglik(omegas, t, shots, ones, coherence_time)


def history_loglik(omegas, times, shots, ones, coherence_time):
    if len(times) and _fast(omegas, np.max(times)):
        return _nb_k.history_loglik(omegas, times, shots, ones, coherence_time)
    return _np_k.history_loglik(omegas, times, shots, ones, coherence_time)


def variance_utilities(locations, weights, times, coherence_time):
    if len(times) and _fast(locations, np.max(times)):
        return _nb_k.variance_utilities(locations, weights, times, coherence_time)
    return _np_k.variance_utilities(locations, weights, times, coherence_time)


def ess_utilities(locations, weights, times, coherence_time, target_ess):
    if len(times) and _fast(locations, np.max(times)):
        return _nb_k.ess_utilities(locations, weights, times, coherence_time, target_ess)
    return _np_k.ess_utilities(locations, weights, times, coherence_time, target_ess)


def systematic_indices(weights, u):
    if _nb_k is not None:
        return _nb_k.systematic_indices(weights, u)
    return _np_k.systematic_indices(weights, u)
