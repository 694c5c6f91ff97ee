"""Closed-form smoothing variational bound, reward term and Mahalanobis regularizer.

All expectations are exact because the model is linear-Gaussian and the
decoders here are affine-Gaussian. The bound summed over t = 1..T is

    sum_t E_q(z_t)[log p(o_t | z_t)] - E_q(z_{t-1})[KL(q(z_t | z_{t-1}, .) || p(z_t | z_{t-1}))]

optionally extended by KL(q(z_0) || p(z_0)), which makes it equal to the
log marginal likelihood when q is the exact smoothing posterior.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .beliefs import BeliefTrajectory
from .model import DiagGaussian, SsmSpec, ValidationError, VAR_FLOOR
from .sequential import LOG_2PI

QTIL_TOL = 1e-9


@dataclass(frozen=True)
class SmoothedDynamics:
    """Affine-Gaussian conditional q(z_t | z_{t-1}, future) = N(atil*z + btil, qtil)."""

    atil: np.ndarray
    btil: np.ndarray
    qtil: np.ndarray


@dataclass(frozen=True)
class GaussianDecoder:
    """p(o | z) = N(cmat*z + dvec, sigma_o) with diagonal variance sigma_o.

    Each field is a scalar, a length-d vector, or a (T, d) array of per-step
    values (the matched decoder uses the per-step observation noise).
    """

    cmat: np.ndarray
    dvec: np.ndarray
    sigma_o: np.ndarray

    def __post_init__(self):
        for name in ("cmat", "dvec", "sigma_o"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.sigma_o > 0):
            raise ValidationError("decoder sigma_o must be positive")

    @classmethod
    def identity(cls, sigma_o) -> "GaussianDecoder":
        return cls(1.0, 0.0, sigma_o)

    @classmethod
    def matched(cls, spec: SsmSpec) -> "GaussianDecoder":
        """Identity decoder whose noise equals the observation noise r_t."""
        return cls.identity(np.where(spec.observed[:, None], spec.r, 1.0))

    def rows(self, idx):
        """Parameters at 1-based steps ``idx`` broadcastable against (len(idx), d)."""
        pick = lambda x: x[np.asarray(idx) - 1] if x.ndim == 2 else x
        return pick(self.cmat), pick(self.dvec), pick(self.sigma_o)


@dataclass(frozen=True)
class RewardHead:
    """p(r | z) = N(cvec . z + d0, sigma_r); sigma_r is a variance."""

    cvec: np.ndarray
    d0: float
    sigma_r: float

    def __post_init__(self):
        object.__setattr__(self, "cvec", np.asarray(self.cvec, dtype=float))
        if not self.sigma_r > 0:
            raise ValidationError("reward head sigma_r must be positive")


@dataclass(frozen=True)
class ElboConfig:
    free_nats: float = 3.0
    kl_balance: float = 0.5
    alpha: float = 1.0
    include_t0_term: bool = True

    def __post_init__(self):
        if self.free_nats < 0:
            raise ValidationError("free_nats must be nonnegative")
        if not 0.0 <= self.kl_balance <= 1.0:
            raise ValidationError("kl_balance must lie in [0, 1]")
        if self.alpha < 0:
            raise ValidationError("alpha must be nonnegative")


@dataclass
class ElboReport:
    recon: float
    dyn_kl: float
    reward: float
    regularizer: float
    total: float
    per_step_kl: np.ndarray
    kl_initial: float = 0.0
    kl_penalty: float = 0.0  # dyn_kl after the free-nats clip
    config: ElboConfig = field(default_factory=ElboConfig)

    def to_dict(self) -> dict:
        return {
            "recon": self.recon,
            "dyn_kl": self.dyn_kl,
            "reward": self.reward,
            "regularizer": self.regularizer,
            "total": self.total,
            "per_step_kl": [float(x) for x in self.per_step_kl],
            "kl_initial": self.kl_initial,
            "kl_penalty": self.kl_penalty,
            "config": asdict(self.config),
        }


# -- vectorized kernels (leading time axis allowed) -------------------------

def _smoothed_dynamics(prev_mean, prev_var, cur_mean, cur_var, cross, var_floor):
    atil = cross / prev_var
    btil = cur_mean - atil * prev_mean
    qtil = cur_var - atil * cross
    if np.any(qtil < -QTIL_TOL):
        worst = np.unravel_index(np.argmin(qtil), np.shape(qtil))
        raise ValidationError(f"inconsistent smoothed inputs: conditional variance "
                              f"{float(np.min(qtil)):.3g} at index {worst}")
    return atil, btil, np.maximum(qtil, var_floor)


def _expected_kl(atil, btil, qtil, a, b, q, prev_mean, prev_var):
    da = atil - a
    db = btil - b
    mean_sq = da * da * (prev_var + prev_mean * prev_mean) + 2 * da * db * prev_mean + db * db
    return 0.5 * (np.log(q / qtil) + qtil / q + mean_sq / q - 1.0)


def _expected_loglik(c, offset, noise_var, mean, var, target):
    """Per-entry E_{z ~ N(mean, var)}[log N(target; c*z + offset, noise_var)]."""
    resid = target - (c * mean + offset)
    return -0.5 * (LOG_2PI + np.log(noise_var) + (resid * resid + c * c * var) / noise_var)


# -- public operations --------------------------------------------------------

def smoothed_dynamics(prev_smoothed: DiagGaussian, cur_smoothed: DiagGaussian, cross_cov,
                      var_floor: float = VAR_FLOOR) -> SmoothedDynamics:
    """Conditional of z_t given z_{t-1} implied by the smoothed pairwise joint."""
    if not np.all(prev_smoothed.var > 0):
        raise ValidationError("previous smoothed variance must be positive")
    return SmoothedDynamics(*_smoothed_dynamics(prev_smoothed.mean, prev_smoothed.var,
                                                cur_smoothed.mean, cur_smoothed.var,
                                                np.asarray(cross_cov, dtype=float), var_floor))


def expected_dyn_kl(sd: SmoothedDynamics, a, b, q, prev_smoothed: DiagGaussian) -> float:
    """E_{z_{t-1}}[KL(smoothed conditional || prior dynamics)], summed over dimensions."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0) or np.any(sd.qtil <= 0):
        raise ValidationError("variances must be positive")
    return float(np.sum(_expected_kl(sd.atil, sd.btil, sd.qtil, np.asarray(a), np.asarray(b), q,
                                     prev_smoothed.mean, prev_smoothed.var)))


def recon_term(decoder: GaussianDecoder, belief: DiagGaussian, target) -> float:
    target = np.asarray(target, dtype=float)
    if target.shape != belief.mean.shape:
        raise ValidationError(f"target has shape {target.shape}, belief has {belief.mean.shape}")
    return float(np.sum(_expected_loglik(decoder.cmat, decoder.dvec, decoder.sigma_o,
                                         belief.mean, belief.var, target)))


def reward_term(head: RewardHead, belief: DiagGaussian, reward: float) -> float:
    mean = float(head.cvec @ belief.mean) + head.d0
    var = float(head.cvec ** 2 @ belief.var)
    return float(_expected_loglik(1.0, mean, head.sigma_r, 0.0, var, reward))


def gaussian_kl(p_mean, p_var, q_mean, q_var) -> float:
    """KL(N(p_mean, p_var) || N(q_mean, q_var)) for diagonal Gaussians."""
    return float(0.5 * np.sum(np.log(q_var / p_var) + (p_var + (p_mean - q_mean) ** 2) / q_var
                              - 1.0))


def mahalanobis_reg(m_seq, filtered: Sequence[DiagGaussian]) -> float:
    """sum_t (m_t - mu_t)^T diag(var_t)^-1 (m_t - mu_t) against filtered beliefs t = 1..T."""
    m = np.asarray(m_seq, dtype=float)
    if len(filtered) != len(m):
        raise ValidationError(f"{len(m)} backbone outputs for {len(filtered)} filtered beliefs")
    if len(m) == 0:
        return 0.0
    mu = np.stack([f.mean for f in filtered])
    var = np.stack([f.var for f in filtered])
    if m.shape != mu.shape:
        raise ValidationError(f"backbone outputs have shape {m.shape}, expected {mu.shape}")
    return float(np.sum((m - mu) ** 2 / var))


def full_objective(report: ElboReport, alpha: float) -> float:
    return report.recon + report.reward - report.kl_penalty - alpha * report.regularizer


def elbo(spec: SsmSpec, obs, beliefs: BeliefTrajectory, decoder: GaussianDecoder,
         reward_head: Optional[RewardHead] = None, rewards=None,
         cfg: Optional[ElboConfig] = None, m_seq=None, targets=None) -> ElboReport:
    """Evaluate the bound on smoothed ``beliefs``.

    ``targets`` defaults to the observations ``w``; steps whose target is None
    contribute no reconstruction term. ``m_seq`` (T rows) enables the
    regularizer against the filtered means of t = 1..T.
    """
    cfg = cfg or ElboConfig()
    if obs is not None:
        spec = spec.with_observations(obs)
    T, d = spec.T, spec.d
    if not beliefs.is_smoothed:
        raise ValidationError("elbo needs smoothed beliefs")
    if beliefs.T != T or beliefs.d != d:
        raise ValidationError(f"beliefs have (T, d)=({beliefs.T}, {beliefs.d}), "
                              f"spec has ({T}, {d})")
    sm, sv = beliefs.smoothed_mean, beliefs.smoothed_var

    if targets is None:
        targets = spec.observation_list()
    if len(targets) != T:
        raise ValidationError(f"{len(targets)} targets for horizon T={T}")
    present = np.array([x is not None for x in targets], dtype=bool)
    recon = 0.0
    if present.any():
        tgt = np.stack([np.asarray(x, dtype=float) for x in targets if x is not None])
        if tgt.shape[1:] != (d,):
            raise ValidationError(f"targets must have length {d}")
        idx = np.flatnonzero(present) + 1
        c, off, noise = decoder.rows(idx)
        recon = float(np.sum(_expected_loglik(c, off, noise, sm[idx], sv[idx], tgt)))

    atil, btil, qtil = _smoothed_dynamics(sm[:-1], sv[:-1], sm[1:], sv[1:], beliefs.cross_cov,
                                          spec.var_floor)
    per_step = _expected_kl(atil, btil, qtil, spec.a, spec.b, spec.q, sm[:-1], sv[:-1]).sum(axis=1)
    kl0 = gaussian_kl(sm[0], sv[0], 0.0, spec.sigma0) if cfg.include_t0_term else 0.0
    dyn_kl = float(per_step.sum()) + kl0
    kl_penalty = max(dyn_kl, cfg.free_nats * T)

    reward = 0.0
    if reward_head is not None:
        if rewards is None or len(rewards) != T:
            raise ValidationError("reward head given without T rewards")
        rw = np.array([np.nan if x is None else float(x) for x in rewards])
        ok = ~np.isnan(rw)
        mean = sm[1:] @ reward_head.cvec + reward_head.d0
        var = sv[1:] @ reward_head.cvec ** 2
        reward = float(np.sum(_expected_loglik(1.0, mean[ok], reward_head.sigma_r, 0.0, var[ok],
                                               rw[ok])))

    regularizer = 0.0
    if m_seq is not None:
        regularizer = mahalanobis_reg(m_seq, beliefs.filtered[1:])

    report = ElboReport(recon=recon, dyn_kl=dyn_kl, reward=reward, regularizer=regularizer,
                        total=0.0, per_step_kl=per_step, kl_initial=kl0, kl_penalty=kl_penalty,
                        config=cfg)
    report.total = full_objective(report, cfg.alpha)
    return report
