"""Brute-force ground truth: dense joint-Gaussian conditioning and Monte-Carlo KL.

Used by the test-suite and by ``scan-kalman verify``; nothing here is on a
hot path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import SsmSpec, make_rng

MAX_DENSE = 64


@dataclass(frozen=True)
class DenseGaussian:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class OracleResult:
    smoothed_mean: np.ndarray  # (T+1, d)
    smoothed_var: np.ndarray
    filtered_mean: np.ndarray  # (T+1, d), conditioned on w_1..w_t only
    filtered_var: np.ndarray
    cross_cov: np.ndarray  # (T, d): Cov(z_t, z_{t+1} | all w)
    log_evidence: float
    joint: DenseGaussian  # prior over vec(z_0..z_T), time-major


def prior_joint(spec: SsmSpec) -> DenseGaussian:
    """Joint prior over z_0..z_T laid out time-major (index t*d + i)."""
    T, d = spec.T, spec.d
    n = d * (T + 1)
    # z = m + B e with e ~ N(0, diag(sigma0, q_1..q_T))
    B = np.zeros((n, n))
    m = np.zeros(n)
    noise = np.concatenate([spec.sigma0, spec.q.ravel()])
    idx = np.arange(d)
    for t in range(T + 1):
        B[t * d + idx, t * d + idx] = 1.0
        if t > 0:
            m[t * d:(t + 1) * d] = spec.a[t - 1] * m[(t - 1) * d:t * d] + spec.b[t - 1]
            B[t * d:(t + 1) * d, :t * d] = spec.a[t - 1][:, None] * B[(t - 1) * d:t * d, :t * d]
    cov = (B * noise) @ B.T
    return DenseGaussian(m, 0.5 * (cov + cov.T))


def _condition(joint: DenseGaussian, rows: np.ndarray, values: np.ndarray, noise: np.ndarray):
    """Condition on y = z[rows] + v, v ~ N(0, diag(noise)). Returns (mean, cov, log p(y))."""
    if rows.size == 0:
        return joint.mean, joint.cov, 0.0
    S = joint.cov[np.ix_(rows, rows)] + np.diag(noise)
    cho = sla.cho_factor(S, lower=True)
    resid = values - joint.mean[rows]
    cross = joint.cov[:, rows]
    mean = joint.mean + cross @ sla.cho_solve(cho, resid)
    cov = joint.cov - cross @ sla.cho_solve(cho, cross.T)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    quad = resid @ sla.cho_solve(cho, resid)
    log_ev = -0.5 * (rows.size * np.log(2 * np.pi) + logdet + quad)
    return mean, 0.5 * (cov + cov.T), float(log_ev)


def dense_joint_inference(spec: SsmSpec, obs=None) -> OracleResult:
    """Exact posterior marginals, adjacent cross-covariances and log-evidence."""
    if obs is not None:
        spec = spec.with_observations(obs)
    T, d = spec.T, spec.d
    if d * (T + 1) > MAX_DENSE:
        raise ValueError(f"dense oracle limited to d*(T+1) <= {MAX_DENSE}, got {d * (T + 1)}")
    joint = prior_joint(spec)
    times = np.flatnonzero(spec.observed) + 1  # z index of each observed step
    rows = (times[:, None] * d + np.arange(d)).ravel()
    values = spec.w[spec.observed].ravel()
    noise = spec.r[spec.observed].ravel()

    mean, cov, log_ev = _condition(joint, rows, values, noise)
    sm = mean.reshape(T + 1, d)
    sv = np.diag(cov).reshape(T + 1, d)
    cross = np.array([np.diag(cov[t * d:(t + 1) * d, (t + 1) * d:(t + 2) * d])
                      for t in range(T)]).reshape(T, d)

    fm = np.empty((T + 1, d))
    fv = np.empty((T + 1, d))
    for t in range(T + 1):
        keep = times <= t
        kr = (times[keep][:, None] * d + np.arange(d)).ravel()
        mt, ct, _ = _condition(joint, kr, spec.w[spec.observed][keep].ravel(),
                               spec.r[spec.observed][keep].ravel())
        fm[t] = mt[t * d:(t + 1) * d]
        fv[t] = np.diag(ct)[t * d:(t + 1) * d]
    return OracleResult(sm, sv, fm, fv, cross, log_ev, joint)


def mc_expected_kl(sd, a, b, q, prev, samples: int, seed: int = 0):
    """Monte-Carlo estimate of E_{z ~ prev}[KL(N(atil z + btil, qtil) || N(a z + b, q))].

    ``sd`` is anything with ``atil``, ``btil``, ``qtil``; ``prev`` has ``mean``
    and ``var``. Returns (estimate, standard error).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = make_rng(seed)
    z = prev.mean + np.sqrt(prev.var) * rng.standard_normal((samples, np.size(prev.mean)))
    mean_gap = (sd.atil - a) * z + (sd.btil - b)
    per = 0.5 * (np.log(q / sd.qtil) + sd.qtil / q + mean_gap ** 2 / q - 1.0)
    kl = per.sum(axis=1)
    est = float(kl.mean())
    stderr = float(kl.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")
    return est, stderr
