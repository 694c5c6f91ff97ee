from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .model import DiagGaussian


@dataclass(frozen=True)
class BeliefTrajectory:
    """Aligned belief sequences for one sequence of length T.

    Arrays are stacked over time: ``predicted_*`` has rows t = 1..T,
    ``filtered_*`` and ``smoothed_*`` have rows t = 0..T (row 0 of the filtered
    belief is the prior on z_0), ``gains``/``cross_cov`` have rows t = 0..T-1.
    The smoothing fields are None on a filter-only result.
    """

    predicted_mean: np.ndarray
    predicted_var: np.ndarray
    filtered_mean: np.ndarray
    filtered_var: np.ndarray
    log_marginal: float
    smoothed_mean: Optional[np.ndarray] = None
    smoothed_var: Optional[np.ndarray] = None
    gains: Optional[np.ndarray] = None
    cross_cov: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return self.predicted_mean.shape[0]

    @property
    def d(self) -> int:
        return self.filtered_mean.shape[1]

    @property
    def is_smoothed(self) -> bool:
        return self.smoothed_mean is not None

    @property
    def predicted(self) -> list[DiagGaussian]:
        return _as_list(self.predicted_mean, self.predicted_var)

    @property
    def filtered(self) -> list[DiagGaussian]:
        return _as_list(self.filtered_mean, self.filtered_var)

    @property
    def smoothed(self) -> list[DiagGaussian]:
        if not self.is_smoothed:
            raise ValueError("trajectory has not been smoothed")
        return _as_list(self.smoothed_mean, self.smoothed_var)

    def filter_only(self) -> "BeliefTrajectory":
        return replace(self, smoothed_mean=None, smoothed_var=None, gains=None, cross_cov=None)


def _as_list(mean, var):
    return [DiagGaussian(m, v) for m, v in zip(mean, var)]


def max_abs_diff(x: BeliefTrajectory, y: BeliefTrajectory) -> dict[str, float]:
    """Per-field max absolute difference between two trajectories."""
    out = {}
    for name in ("predicted_mean", "predicted_var", "filtered_mean", "filtered_var",
                 "smoothed_mean", "smoothed_var", "gains", "cross_cov"):
        u, v = getattr(x, name), getattr(y, name)
        if u is None or v is None:
            continue
        out[name] = float(np.max(np.abs(u - v)))
    out["log_marginal"] = abs(x.log_marginal - y.log_marginal)
    return out


def max_rel_diff(x: BeliefTrajectory, y: BeliefTrajectory, fields=None) -> dict[str, float]:
    """Per-field max of |x - y| / max(|y|, 1).

    The denominator is bounded below by one so that entries near zero (means
    crossing the origin) are compared absolutely.
    """
    out = {}
    names = fields or ("predicted_mean", "predicted_var", "filtered_mean", "filtered_var",
                       "smoothed_mean", "smoothed_var", "gains", "cross_cov")
    for name in names:
        u, v = getattr(x, name), getattr(y, name)
        if u is None or v is None:
            continue
        out[name] = float(np.max(np.abs(u - v) / np.maximum(np.abs(v), 1.0)))
    out["log_marginal"] = abs(x.log_marginal - y.log_marginal) / max(abs(y.log_marginal), 1.0)
    return out
