"""Diagonal linear-Gaussian state space model: types, validation, sampling.

The model over latent states ``z_0..z_T`` (all covariances diagonal)::

    z_0 ~ N(0, sigma0)
    z_t = a_t * z_{t-1} + b_t + e_t,    e_t ~ N(0, q_t)
    w_t = z_t + v_t,                    v_t ~ N(0, r_t)   (only on observed steps)

Per-step parameters are stored stacked as ``(T, d)`` arrays so that both the
sequential and the time-parallel inference code can work on them directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

A_MIN = 0.4
A_MAX = 0.99
VAR_FLOOR = 1e-8


class ValidationError(ValueError):
    """Raised when a model or its inputs violate a structural constraint.

    ``problems`` holds one human readable line per violation.
    """

    def __init__(self, problems: Sequence[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.ndim != 1 or mean.shape != var.shape or mean.size < 1:
            raise ValidationError(
                f"mean/var must be equal-length vectors, got {mean.shape} and {var.shape}")
        if not np.all(var > 0):
            raise ValidationError("DiagGaussian variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def d(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class StepParams:
    """Dynamics (a, b, q) into step t and the optional observation (w, r) at t."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    w: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None

    @property
    def observed(self) -> bool:
        return self.w is not None


@dataclass(frozen=True)
class SsmSpec:
    """A horizon-T diagonal SSM.

    ``w`` and ``r`` are ``(T, d)`` arrays whose rows are only meaningful where
    ``observed`` is True (they hold NaN elsewhere).
    """

    sigma0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    w: np.ndarray
    r: np.ndarray
    observed: np.ndarray
    var_floor: float = VAR_FLOOR

    @property
    def d(self) -> int:
        return int(self.sigma0.shape[0])

    @property
    def T(self) -> int:
        return int(self.a.shape[0])

    @property
    def steps(self) -> list[StepParams]:
        return list(self.iter_steps())

    def iter_steps(self) -> Iterator[StepParams]:
        for t in range(self.T):
            if self.observed[t]:
                yield StepParams(self.a[t], self.b[t], self.q[t], self.w[t], self.r[t])
            else:
                yield StepParams(self.a[t], self.b[t], self.q[t])

    @classmethod
    def from_steps(cls, sigma0, steps: Sequence[StepParams], var_floor: float = VAR_FLOOR,
                   d: Optional[int] = None) -> "SsmSpec":
        """Stack a list of StepParams into a spec. Does not validate."""
        sigma0 = np.atleast_1d(np.asarray(sigma0, dtype=float))
        if d is None:
            d = sigma0.shape[0]
        problems = []
        if d == 0:
            problems.append("dimension d must be >= 1")
        if len(steps) == 0:
            problems.append("step list is empty (T must be >= 1)")
        if problems:
            raise ValidationError(problems)
        T = len(steps)
        a = np.empty((T, d))
        b = np.empty((T, d))
        q = np.empty((T, d))
        w = np.full((T, d), np.nan)
        r = np.full((T, d), np.nan)
        observed = np.zeros(T, dtype=bool)
        for t, st in enumerate(steps):
            vecs = {"a": st.a, "b": st.b, "q": st.q}
            if (st.w is None) != (st.r is None):
                problems.append(f"step {t}: w and r must both be present or both absent")
            if st.w is not None and st.r is not None:
                vecs["w"] = st.w
                vecs["r"] = st.r
            bad = False
            for name, v in vecs.items():
                v = np.atleast_1d(np.asarray(v, dtype=float))
                if v.shape != (d,):
                    problems.append(f"step {t}: {name} has length {v.size}, expected {d}")
                    bad = True
            if bad:
                continue
            a[t], b[t], q[t] = st.a, st.b, st.q
            if "w" in vecs:
                w[t], r[t] = st.w, st.r
                observed[t] = True
        if sigma0.shape != (d,):
            problems.append(f"sigma0 has length {sigma0.size}, expected {d}")
        if problems:
            raise ValidationError(problems)
        return cls(sigma0, a, b, q, w, r, observed, float(var_floor))

    @classmethod
    def time_invariant(cls, T: int, a, b, q, r=None, sigma0=1.0, d: int = 1,
                       var_floor: float = VAR_FLOOR) -> "SsmSpec":
        """Convenience constructor; every step observed iff ``r`` is given."""
        row = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (d,))
        st = StepParams(row(a), row(b), row(q),
                        None if r is None else np.zeros(d), None if r is None else row(r))
        return cls.from_steps(row(sigma0), [st] * T, var_floor=var_floor)

    def with_observations(self, obs: Sequence[Optional[np.ndarray]]) -> "SsmSpec":
        """Return a copy whose w rows are replaced by ``obs`` (None = missing).

        Presence must match the spec's observed mask.
        """
        if len(obs) != self.T:
            raise ValidationError(f"got {len(obs)} observations for horizon T={self.T}")
        w = np.full_like(self.w, np.nan)
        problems = []
        for t, o in enumerate(obs):
            if (o is None) == bool(self.observed[t]):
                problems.append(f"observation {t + 1}: presence does not match the spec's r")
                continue
            if o is not None:
                o = np.asarray(o, dtype=float)
                if o.shape != (self.d,):
                    problems.append(f"observation {t + 1}: length {o.size}, expected {self.d}")
                    continue
                w[t] = o
        if problems:
            raise ValidationError(problems)
        return SsmSpec(self.sigma0, self.a, self.b, self.q, w, self.r, self.observed,
                       self.var_floor)

    def observation_list(self) -> list[Optional[np.ndarray]]:
        return [self.w[t] if self.observed[t] else None for t in range(self.T)]


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T+1, d)
    observations: list = field(default_factory=list)  # length T, None where missing
    seed: int = 0

    @property
    def T(self) -> int:
        return len(self.observations)


def clamp_transition(raw) -> np.ndarray:
    """Clamp transition coefficients into [0.4, 0.99]."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValidationError("transition coefficients must be finite")
    return np.clip(raw, A_MIN, A_MAX)


def validate_spec(spec: SsmSpec) -> SsmSpec:
    """Clamp transitions, floor all variances and check finiteness.

    Raises ValidationError listing every violation found. Idempotent.
    """
    problems = []
    if spec.d < 1:
        problems.append("dimension d must be >= 1")
    if spec.T < 1:
        problems.append("step list is empty (T must be >= 1)")
    if not (spec.var_floor > 0 and math.isfinite(spec.var_floor)):
        problems.append("var_floor must be a positive finite number")
    if problems:
        raise ValidationError(problems)
    shapes = {"a": spec.a, "b": spec.b, "q": spec.q, "w": spec.w, "r": spec.r}
    for name, arr in shapes.items():
        if arr.shape != (spec.T, spec.d):
            problems.append(f"{name} has shape {arr.shape}, expected {(spec.T, spec.d)}")
    if spec.sigma0.shape != (spec.d,):
        problems.append(f"sigma0 has shape {spec.sigma0.shape}, expected {(spec.d,)}")
    if spec.observed.shape != (spec.T,):
        problems.append("observed mask has wrong length")
    if problems:
        raise ValidationError(problems)

    obs = spec.observed
    for name, arr in (("a", spec.a), ("b", spec.b), ("q", spec.q)):
        bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
        for t in bad[:10]:
            problems.append(f"step {t}: non-finite {name}")
    for name, arr in (("w", spec.w), ("r", spec.r)):
        bad = np.flatnonzero(obs & ~np.all(np.isfinite(arr), axis=1))
        for t in bad[:10]:
            problems.append(f"step {t}: non-finite {name}")
    if not np.all(np.isfinite(spec.sigma0)):
        problems.append("sigma0: non-finite value")
    if problems:
        raise ValidationError(problems)

    floor = spec.var_floor
    r = np.where(obs[:, None], np.maximum(spec.r, floor), np.nan)
    w = np.where(obs[:, None], spec.w, np.nan)
    return SsmSpec(
        sigma0=np.maximum(spec.sigma0, floor),
        a=clamp_transition(spec.a),
        b=spec.b.copy(),
        q=np.maximum(spec.q, floor),
        w=w,
        r=r,
        observed=obs.copy(),
        var_floor=floor,
    )


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator; streams are reproducible across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_trajectory(spec: SsmSpec, seed: int) -> Trajectory:
    """Draw z_0..z_T and w_t on observed steps. Pure function of (spec, seed)."""
    if seed < 0:
        raise ValidationError("seed must be an unsigned integer")
    rng = make_rng(seed)
    T, d = spec.T, spec.d
    z0_noise = rng.standard_normal(d)
    dyn_noise = rng.standard_normal((T, d))
    obs_noise = rng.standard_normal((T, d))

    states = np.empty((T + 1, d))
    states[0] = np.sqrt(spec.sigma0) * z0_noise
    shocks = spec.b + np.sqrt(spec.q) * dyn_noise
    a = spec.a
    if d == 1:
        # scalar chain: plain floats are much cheaper than 1-element arrays
        z = float(states[0, 0])
        av, sv = a[:, 0].tolist(), shocks[:, 0].tolist()
        out = [0.0] * T
        for t in range(T):
            z = av[t] * z + sv[t]
            out[t] = z
        states[1:, 0] = out
    else:
        for t in range(T):
            states[t + 1] = a[t] * states[t] + shocks[t]

    noisy = states[1:] + np.sqrt(np.where(spec.observed[:, None], spec.r, 1.0)) * obs_noise
    observations = [noisy[t].copy() if spec.observed[t] else None for t in range(T)]
    return Trajectory(states=states, observations=observations, seed=int(seed))


def stationary_variance(a: float, q: float) -> float:
    """Stationary variance q / (1 - a^2) of a scalar AR(1) chain."""
    if abs(a) >= 1:
        raise ValueError(f"|a| must be < 1 for a stationary chain, got {a}")
    if q <= 0:
        raise ValueError("q must be positive")
    return q / (1.0 - a * a)


def random_spec(rng: np.random.Generator, d: int, T: int, p_missing: float = 0.2,
                var_floor: float = VAR_FLOOR) -> SsmSpec:
    """Random validated spec for tests and benchmarks (observations are sampled)."""
    a = rng.uniform(A_MIN, A_MAX, (T, d))
    b = rng.normal(0.0, 0.5, (T, d))
    q = np.exp(rng.uniform(np.log(0.05), np.log(2.0), (T, d)))
    r = np.exp(rng.uniform(np.log(0.05), np.log(2.0), (T, d)))
    observed = rng.random(T) >= p_missing
    sigma0 = np.exp(rng.uniform(np.log(0.1), np.log(3.0), d))
    w = np.where(observed[:, None], np.zeros((T, d)), np.nan)
    spec = SsmSpec(sigma0, a, b, q, w, np.where(observed[:, None], r, np.nan), observed,
                   var_floor)
    spec = validate_spec(spec)
    traj = sample_trajectory(spec, int(rng.integers(0, 2**63)))
    return spec.with_observations(traj.observations)
