"""Time-parallel Kalman filtering and smoothing via associative scans.

Diagonal specialization of the filtering/smoothing element algebra of
Särkkä & García-Fernández (2021) for identity observation map and diagonal
A, Q, R. Every matrix product becomes an entrywise product; see
docs/element_algebra.md for the derivation.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .beliefs import BeliefTrajectory
from .model import SsmSpec, ValidationError
from .scan import CHUNKED, FORWARD, REVERSE, ScanBreakdown, ScanPlan, scan_stacked
from .sequential import LOG_2PI


class FilterElement(NamedTuple):
    """p(z_t | z_s, w_{s+1:t}) = N(fa*z_s + fb, fc) and the evidence of
    w_{s+1:t} as a function of z_s in information form (eta, jj)."""

    fa: np.ndarray
    fb: np.ndarray
    fc: np.ndarray
    eta: np.ndarray
    jj: np.ndarray


class SmoothElement(NamedTuple):
    """p(z_t | z_u, w_{1:T}) = N(se*z_u + sg, sl) for some later u."""

    se: np.ndarray
    sg: np.ndarray
    sl: np.ndarray


def make_filter_elements(spec: SsmSpec, obs=None, init=None) -> FilterElement:
    """Stacked (T, d) filter elements. Row 0 absorbs the prior on z_0."""
    if obs is not None:
        spec = spec.with_observations(obs)
    a, b, q = spec.a, spec.b, spec.q
    observed = spec.observed[:, None]
    r = np.where(observed, spec.r, 1.0)
    resid = np.where(observed, spec.w, 0.0) - b
    s = q + r

    fa = np.where(observed, a * r / s, a)
    fb = np.where(observed, b + q / s * resid, b)
    fc = np.where(observed, q * r / s, q)
    eta = np.where(observed, a * resid / s, 0.0)
    jj = np.where(observed, a * a / s, 0.0)

    # first step: condition the pushed-forward prior directly
    if init is None:
        m0, p0 = np.zeros(spec.d), spec.sigma0
    else:
        m0, p0 = init.mean, init.var
    m1 = a[0] * m0 + b[0]
    p1 = np.maximum(a[0] ** 2 * p0 + q[0], spec.var_floor)
    if spec.observed[0]:
        s1 = p1 + spec.r[0]
        fb[0] = m1 + p1 / s1 * (spec.w[0] - m1)
        fc[0] = p1 * spec.r[0] / s1
    else:
        fb[0], fc[0] = m1, p1
    fa[0] = 0.0
    eta[0] = 0.0
    jj[0] = 0.0
    return FilterElement(fa, fb, fc, eta, jj)


def combine_filter(e1: FilterElement, e2: FilterElement) -> FilterElement:
    """Compose an earlier element ``e1`` with a later element ``e2``."""
    # 1 + fc*jj >= 1 because both factors are nonnegative; no floor needed
    inv = 1.0 / (1.0 + e1.fc * e2.jj)
    fa2_inv = e2.fa * inv
    return FilterElement(
        fa=fa2_inv * e1.fa,
        fb=fa2_inv * (e1.fb + e1.fc * e2.eta) + e2.fb,
        fc=fa2_inv * e2.fa * e1.fc + e2.fc,
        eta=e1.fa * inv * (e2.eta - e2.jj * e1.fb) + e1.eta,
        jj=e1.fa * e1.fa * inv * e2.jj + e1.jj,
    )


def make_smooth_elements(spec: SsmSpec, filtered_mean, filtered_var,
                         predicted_mean=None, predicted_var=None) -> SmoothElement:
    """Stacked (T+1, d) smoothing elements for t = 0..T; the last is terminal."""
    fm = np.asarray(filtered_mean)
    fv = np.asarray(filtered_var)
    T, d = spec.T, spec.d
    if fm.shape != (T + 1, d) or fv.shape != (T + 1, d):
        raise ValidationError(f"filtered beliefs have shape {fm.shape}, expected {(T + 1, d)}")
    a, q = spec.a, spec.q
    if predicted_mean is None:
        predicted_mean = a * fm[:-1] + spec.b
    if predicted_var is None:
        predicted_var = np.maximum(a * a * fv[:-1] + q, spec.var_floor)
    se = np.empty((T + 1, d))
    sg = np.empty((T + 1, d))
    sl = np.empty((T + 1, d))
    gain = fv[:-1] * a / predicted_var
    se[:-1] = gain
    sg[:-1] = fm[:-1] - gain * predicted_mean
    # P - G*a*P == P*q/Ppred, written without the subtraction
    sl[:-1] = fv[:-1] * q / predicted_var
    se[-1], sg[-1], sl[-1] = 0.0, fm[-1], fv[-1]
    return SmoothElement(se, sg, sl)


def combine_smooth(e1: SmoothElement, e2: SmoothElement) -> SmoothElement:
    """Compose an earlier element ``e1`` with a later element ``e2``."""
    return SmoothElement(
        se=e1.se * e2.se,
        sg=e1.se * e2.sg + e1.sg,
        sl=e1.se * e1.se * e2.sl + e1.sl,
    )


def _plan(plan: Optional[ScanPlan], direction: str) -> ScanPlan:
    if plan is None:
        return ScanPlan(direction=direction, strategy=CHUNKED)
    return replace(plan, direction=direction)


def parallel_filter(spec: SsmSpec, obs=None, plan: Optional[ScanPlan] = None,
                    combine: Callable = combine_filter) -> BeliefTrajectory:
    """Filtered beliefs from an inclusive forward scan over filter elements.

    Predicted beliefs and the log marginal are rebuilt pointwise afterwards.
    """
    if obs is not None:
        spec = spec.with_observations(obs)
    elems = make_filter_elements(spec)
    try:
        out = scan_stacked(elems, combine, _plan(plan, FORWARD))
    except ScanBreakdown as exc:
        raise ScanBreakdown(exc.start + 1, exc.stop + 1, "filter timesteps (1-based)") from exc

    T, d = spec.T, spec.d
    floor = spec.var_floor
    fm = np.empty((T + 1, d))
    fv = np.empty((T + 1, d))
    fm[0], fv[0] = 0.0, spec.sigma0
    fm[1:] = out.fb
    fv[1:] = np.maximum(out.fc, floor)

    pm = spec.a * fm[:-1] + spec.b
    pv = np.maximum(spec.a ** 2 * fv[:-1] + spec.q, floor)
    obs_rows = spec.observed
    s = pv[obs_rows] + spec.r[obs_rows]
    resid = spec.w[obs_rows] - pm[obs_rows]
    log_marginal = -0.5 * float(np.sum(LOG_2PI + np.log(s) + resid * resid / s))
    return BeliefTrajectory(pm, pv, fm, fv, log_marginal)


def parallel_smooth(spec: SsmSpec, partial: BeliefTrajectory,
                    plan: Optional[ScanPlan] = None,
                    combine: Callable = combine_smooth) -> BeliefTrajectory:
    """Smoothed beliefs, gains and cross-covariances from a reverse scan."""
    if partial is None:
        raise ValueError("parallel_smooth needs a filter result")
    elems = make_smooth_elements(spec, partial.filtered_mean, partial.filtered_var,
                                 partial.predicted_mean, partial.predicted_var)
    try:
        out = scan_stacked(elems, combine, _plan(plan, REVERSE))
    except ScanBreakdown as exc:
        raise ScanBreakdown(exc.start, exc.stop, "smoother timesteps (0-based)") from exc
    sm = out.sg
    sv = np.maximum(out.sl, spec.var_floor)
    gains = elems.se[:-1]
    cross = gains * sv[1:]
    return replace(partial, smoothed_mean=sm, smoothed_var=sv, gains=gains, cross_cov=cross)


def parallel_smoother(spec: SsmSpec, obs=None, plan: Optional[ScanPlan] = None) -> BeliefTrajectory:
    if obs is not None:
        spec = spec.with_observations(obs)
    return parallel_smooth(spec, parallel_filter(spec, plan=plan), plan)
