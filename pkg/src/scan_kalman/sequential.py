"""Reference sequential Kalman filter and RTS smoother for the diagonal model."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .beliefs import BeliefTrajectory
from .model import DiagGaussian, SsmSpec, StepParams, ValidationError, VAR_FLOOR

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_logpdf(x, mean, var) -> float:
    """Sum of independent 1-D normal log densities."""
    x, mean, var = np.asarray(x), np.asarray(mean), np.asarray(var)
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + (x - mean) ** 2 / var))


def filter_step(prev: DiagGaussian, step: StepParams, var_floor: float = VAR_FLOOR):
    """One predict/update cycle. Returns (predicted, filtered, log-likelihood increment)."""
    if prev.d != np.size(step.a):
        raise ValidationError(f"belief has d={prev.d}, step has d={np.size(step.a)}")
    m_pred = step.a * prev.mean + step.b
    p_pred = np.maximum(step.a * step.a * prev.var + step.q, var_floor)
    predicted = DiagGaussian(m_pred, p_pred)
    if step.w is None:
        return predicted, predicted, 0.0
    s = p_pred + step.r
    k = p_pred / s
    m = m_pred + k * (step.w - m_pred)
    # (1 - k) * p written as p * r / s, which avoids cancellation for k near 1
    p = np.maximum(p_pred * step.r / s, var_floor)
    return predicted, DiagGaussian(m, p), gaussian_logpdf(step.w, m_pred, s)


def filter(spec: SsmSpec, obs: Optional[Sequence[Optional[np.ndarray]]] = None,
           init: Optional[DiagGaussian] = None) -> BeliefTrajectory:
    """Forward Kalman filter. ``init`` overrides the N(0, sigma0) prior on z_0."""
    if obs is not None:
        spec = spec.with_observations(obs)
    T, d = spec.T, spec.d
    floor = spec.var_floor
    if init is None:
        m, p = np.zeros(d), spec.sigma0.copy()
    else:
        m, p = init.mean.copy(), init.var.copy()
    pm = np.empty((T, d))
    pv = np.empty((T, d))
    fm = np.empty((T + 1, d))
    fv = np.empty((T + 1, d))
    fm[0], fv[0] = m, p
    a, b, q, w, r, observed = spec.a, spec.b, spec.q, spec.w, spec.r, spec.observed
    log_marginal = 0.0
    # inlined filter_step: this loop is the baseline the benchmarks time
    for t in range(T):
        at = a[t]
        m = at * m + b[t]
        p = np.maximum(at * at * p + q[t], floor)
        pm[t], pv[t] = m, p
        if observed[t]:
            s = p + r[t]
            resid = w[t] - m
            log_marginal -= 0.5 * float(np.sum(LOG_2PI + np.log(s) + resid * resid / s))
            m = m + (p / s) * resid
            p = np.maximum(p * r[t] / s, floor)
        fm[t + 1], fv[t + 1] = m, p
    return BeliefTrajectory(pm, pv, fm, fv, log_marginal)


def rts_smooth(spec: SsmSpec, partial: BeliefTrajectory) -> BeliefTrajectory:
    """Rauch-Tung-Striebel backward pass over a filter result."""
    if partial is None or partial.filtered_mean is None:
        raise ValueError("rts_smooth needs a filter result")
    T, d = spec.T, spec.d
    if partial.T != T or partial.d != d:
        raise ValidationError(f"filter result has (T, d)=({partial.T}, {partial.d}), "
                              f"spec has ({T}, {d})")
    fm, fv = partial.filtered_mean, partial.filtered_var
    pm, pv = partial.predicted_mean, partial.predicted_var
    sm = np.empty_like(fm)
    sv = np.empty_like(fv)
    gains = np.empty((T, d))
    cross = np.empty((T, d))
    sm[T], sv[T] = fm[T], fv[T]
    a = spec.a
    floor = spec.var_floor
    for t in range(T - 1, -1, -1):
        g = fv[t] * a[t] / pv[t]
        sm[t] = fm[t] + g * (sm[t + 1] - pm[t])
        sv[t] = np.maximum(fv[t] + g * g * (sv[t + 1] - pv[t]), floor)
        gains[t] = g
        cross[t] = g * sv[t + 1]
    return replace(partial, smoothed_mean=sm, smoothed_var=sv, gains=gains, cross_cov=cross)


def smooth(spec: SsmSpec, obs=None) -> BeliefTrajectory:
    if obs is not None:
        spec = spec.with_observations(obs)
    return rts_smooth(spec, filter(spec))
