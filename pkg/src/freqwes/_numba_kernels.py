"""Numba-compiled twins of ``_numpy_kernels``.

The jitted code has no long double, so callers route any evaluation where
omega*t can exceed the phase-reduction threshold to the numpy path instead
(see ``kernels``).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _p1(omega, t, inv_tc):
    phase = omega * t
    if inv_tc > 0.0:
        return 0.5 * (1.0 - math.exp(-t * inv_tc) * math.cos(phase))
    s = math.sin(0.5 * phase)
    return s * s


@njit(cache=True, inline="always")
def _p0(omega, t, inv_tc):
    phase = omega * t
    if inv_tc > 0.0:
        return 0.5 * (1.0 + math.exp(-t * inv_tc) * math.cos(phase))
    c = math.cos(0.5 * phase)
    return c * c


@njit(cache=True, inline="always")
def _xlogy(count, p):
    if count == 0:
        return 0.0
    if p <= 0.0:
        return -np.inf
    return count * math.log(p)


def _inv(coherence_time):
    return 1.0 / coherence_time if coherence_time > 0 else 0.0


@njit(cache=True)
def _record_loglik(omegas, t, shots, ones, inv_tc):
    out = np.empty(omegas.shape[0])
    zeros = shots - ones
    for k in range(omegas.shape[0]):
        out[k] = _xlogy(ones, _p1(omegas[k], t, inv_tc)) + _xlogy(
            zeros, _p0(omegas[k], t, inv_tc)
        )
    return out


@njit(cache=True)
def _history_loglik(omegas, times, shots, ones, inv_tc):
    out = np.zeros(omegas.shape[0])
    for k in range(omegas.shape[0]):
        w = omegas[k]
        acc = 0.0
        for r in range(times.shape[0]):
            t = times[r]
            acc += _xlogy(ones[r], _p1(w, t, inv_tc))
            acc += _xlogy(shots[r] - ones[r], _p0(w, t, inv_tc))
        out[k] = acc
    return out


@njit(cache=True)
def _variance_utilities(locations, weights, times, inv_tc):
    n = locations.shape[0]
    centre = 0.0
    for k in range(n):
        centre += weights[k] * locations[k]
    out = np.empty(times.shape[0])
    for j in range(times.shape[0]):
        t = times[j]
        s0 = 0.0
        s0d = 0.0
        s0d2 = 0.0
        s1 = 0.0
        s1d = 0.0
        s1d2 = 0.0
        for k in range(n):
            d = locations[k] - centre
            p1 = _p1(locations[k], t, inv_tc)
            w1 = weights[k] * p1
            w0 = weights[k] * (1.0 - p1)
            s0 += w0
            s0d += w0 * d
            s0d2 += w0 * d * d
            s1 += w1
            s1d += w1 * d
            s1d2 += w1 * d * d
        total = 0.0
        if s0 > 0.0:
            m = s0d / s0
            total += s0 * max(s0d2 / s0 - m * m, 0.0)
        if s1 > 0.0:
            m = s1d / s1
            total += s1 * max(s1d2 / s1 - m * m, 0.0)
        out[j] = -total
    return out


@njit(cache=True)
def _ess_utilities(locations, weights, times, inv_tc, target_ess):
    n = locations.shape[0]
    out = np.empty(times.shape[0])
    for j in range(times.shape[0]):
        t = times[j]
        s0 = 0.0
        q0 = 0.0
        s1 = 0.0
        q1 = 0.0
        for k in range(n):
            p1 = _p1(locations[k], t, inv_tc)
            w1 = weights[k] * p1
            w0 = weights[k] * (1.0 - p1)
            s0 += w0
            q0 += w0 * w0
            s1 += w1
            q1 += w1 * w1
        expected = 0.0
        if s0 > 0.0:
            expected += s0 * s0 * s0 / q0
        if s1 > 0.0:
            expected += s1 * s1 * s1 / q1
        out[j] = -abs(expected - target_ess)
    return out


@njit(cache=True)
def _systematic_indices(weights, u):
    n = weights.shape[0]
    out = np.empty(n, dtype=np.int64)
    cumulative = weights[0]
    i = 0
    for m in range(n):
        pos = (u + m) / n
        while cumulative <= pos and i < n - 1:
            i += 1
            cumulative += weights[i]
        out[m] = i
    return out


def record_loglik(omegas, t, shots, ones, coherence_time):
    return _record_loglik(
        np.ascontiguousarray(omegas, dtype=np.float64),
        float(t), int(shots), int(ones), _inv(coherence_time),
    )


def history_loglik(omegas, times, shots, ones, coherence_time):
    return _history_loglik(
        np.ascontiguousarray(omegas, dtype=np.float64),
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(shots, dtype=np.int64),
        np.ascontiguousarray(ones, dtype=np.int64),
        _inv(coherence_time),
    )


def variance_utilities(locations, weights, times, coherence_time):
    return _variance_utilities(
        np.ascontiguousarray(locations, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(times, dtype=np.float64),
        _inv(coherence_time),
    )


def ess_utilities(locations, weights, times, coherence_time, target_ess):
    return _ess_utilities(
        np.ascontiguousarray(locations, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(times, dtype=np.float64),
        _inv(coherence_time),
        float(target_ess),
    )


def systematic_indices(weights, u):
    return _systematic_indices(np.ascontiguousarray(weights, dtype=np.float64), float(u))
