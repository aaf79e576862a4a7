"""Pure-numpy versions of the hot loops.

Every function here has a jitted twin in ``_numba_kernels`` with the same
signature. ``coherence_time <= 0`` encodes ideal (undamped) dynamics so the
kernels never need an Optional argument.
"""

import numpy as np

# Above this value of omega*t the phase is reduced in extended precision.
PHASE_REDUCTION_THRESHOLD = 1e8

_TWO_PI_LD = 2 * np.arccos(np.longdouble(-1))


def reduced_phase(omegas, t):
    """Return ``omega*t`` reduced modulo 2*pi as float64.

    Reduction happens in long double; below the threshold the plain float64
    product is returned unchanged.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    phase = omegas * t
    if t > 0 and np.max(np.abs(phase), initial=0.0) > PHASE_REDUCTION_THRESHOLD:
        ld = np.asarray(omegas, dtype=np.longdouble) * np.longdouble(t)
        phase = np.fmod(ld, _TWO_PI_LD).astype(np.float64)
    return phase


def prob_one(omegas, t, coherence_time):
    """P(x=1 | omega; t) for an array of omegas and a scalar time."""
    phase = reduced_phase(omegas, t)
    if coherence_time > 0:
        damp = np.exp(-t / coherence_time)
        return 0.5 * (1.0 - damp * np.cos(phase))
    return np.sin(0.5 * phase) ** 2


def prob_zero(omegas, t, coherence_time):
    phase = reduced_phase(omegas, t)
    if coherence_time > 0:
        damp = np.exp(-t / coherence_time)
        return 0.5 * (1.0 + damp * np.cos(phase))
    return np.cos(0.5 * phase) ** 2


def _xlogy(count, p):
    # 0 * log(0) == 0; positive count on a zero probability gives -inf.
    with np.errstate(divide="ignore"):
        out = count * np.log(p)
    if count == 0:
        out = np.zeros_like(p)
    return out


def record_loglik(omegas, t, shots, ones, coherence_time):
    """Log-likelihood of one aggregated record for every omega."""
    p1 = prob_one(omegas, t, coherence_time)
    p0 = prob_zero(omegas, t, coherence_time)
    return _xlogy(ones, p1) + _xlogy(shots - ones, p0)


def history_loglik(omegas, times, shots, ones, coherence_time):
    """Sum of record log-likelihoods over a whole data history."""
    omegas = np.asarray(omegas, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    shots = np.asarray(shots, dtype=np.int64)
    ones = np.asarray(ones, dtype=np.int64)
    if len(times) == 0:
        return np.zeros(omegas.shape, dtype=np.float64)
    top = np.max(np.abs(omegas), initial=0.0) * np.max(times)
    if top > PHASE_REDUCTION_THRESHOLD:
        total = np.zeros(omegas.shape, dtype=np.float64)
        for t, n, k in zip(times, shots, ones):
            total += record_loglik(omegas, float(t), int(n), int(k), coherence_time)
        return total
    phase = np.multiply.outer(omegas, times)
    if coherence_time > 0:
        c = np.exp(-times / coherence_time) * np.cos(phase)
        p1 = 0.5 * (1.0 - c)
        p0 = 0.5 * (1.0 + c)
    else:
        p1 = np.sin(0.5 * phase) ** 2
        p0 = np.cos(0.5 * phase) ** 2
    zeros = shots - ones
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(ones > 0, ones * np.log(p1), 0.0)
        b = np.where(zeros > 0, zeros * np.log(p0), 0.0)
    return (a + b).sum(axis=1)


def variance_utilities(locations, weights, times, coherence_time):
    """Negative expected posterior variance after a single-shot look-ahead.

    Returns one utility per candidate time. Locations are centred on the
    current mean first so small variances survive the E[x^2] - E[x]^2 step.
    """
    locations = np.asarray(locations, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    centre = np.dot(weights, locations)
    d = locations - centre
    d2 = d * d
    out = np.empty(len(times), dtype=np.float64)
    for j, t in enumerate(times):
        p1 = prob_one(locations, float(t), coherence_time)
        total = 0.0
        for p in (1.0 - p1, p1):
            wp = weights * p
            px = wp.sum()
            if px <= 0.0:
                continue
            m = np.dot(wp, d) / px
            var = np.dot(wp, d2) / px - m * m
            total += px * max(var, 0.0)
        out[j] = -total
    return out


def ess_utilities(locations, weights, times, coherence_time, target_ess):
    """Negative distance between expected conditional ESS and a target ESS."""
    locations = np.asarray(locations, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    out = np.empty(len(times), dtype=np.float64)
    for j, t in enumerate(times):
        p1 = prob_one(locations, float(t), coherence_time)
        expected = 0.0
        for p in (1.0 - p1, p1):
            wp = weights * p
            px = wp.sum()
            if px <= 0.0:
                continue
            expected += px * px * px / np.dot(wp, wp)
        out[j] = -abs(expected - target_ess)
    return out


def systematic_indices(weights, u):
    """Systematic resampling with a single uniform offset ``u`` in [0, 1)."""
    weights = np.asarray(weights, dtype=np.float64)
    n = len(weights)
    positions = (u + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)
