"""JSON encoding of specs, trajectories, belief trajectories and reports.

Floats are written with ``repr`` precision, so every finite double
round-trips bit-exactly. Readers also accept decimal strings.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .beliefs import BeliefTrajectory
from .model import SsmSpec, StepParams, Trajectory, ValidationError, VAR_FLOOR


def _vec(x) -> list:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def _read_vec(x, what: str) -> np.ndarray:
    if isinstance(x, (int, float, str)):
        x = [x]
    try:
        return np.array([float(v) for v in x], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what}: expected a list of numbers") from exc


def spec_to_dict(spec: SsmSpec) -> dict:
    steps = []
    for t in range(spec.T):
        st = {"a": _vec(spec.a[t]), "b": _vec(spec.b[t]), "q": _vec(spec.q[t])}
        if spec.observed[t]:
            st["w"] = _vec(spec.w[t])
            st["r"] = _vec(spec.r[t])
        steps.append(st)
    return {"d": spec.d, "sigma0": _vec(spec.sigma0), "var_floor": float(spec.var_floor),
            "steps": steps}


def spec_from_dict(obj: dict) -> SsmSpec:
    """Build an (unvalidated) spec; raises ValidationError on structural problems."""
    if not isinstance(obj, dict):
        raise ValidationError("spec must be a JSON object")
    missing = [k for k in ("d", "sigma0", "steps") if k not in obj]
    if missing:
        raise ValidationError(f"spec is missing keys: {', '.join(missing)}")
    d = int(obj["d"])
    if d < 1:
        raise ValidationError("dimension d must be >= 1")
    steps = []
    for t, st in enumerate(obj["steps"]):
        try:
            w = st.get("w")
            r = st.get("r")
            steps.append(StepParams(
                _read_vec(st["a"], f"steps[{t}].a"),
                _read_vec(st["b"], f"steps[{t}].b"),
                _read_vec(st["q"], f"steps[{t}].q"),
                None if w is None else _read_vec(w, f"steps[{t}].w"),
                None if r is None else _read_vec(r, f"steps[{t}].r"),
            ))
        except (KeyError, AttributeError) as exc:
            raise ValidationError(f"steps[{t}]: needs keys a, b, q") from exc
    return SsmSpec.from_steps(_read_vec(obj["sigma0"], "sigma0"), steps,
                              var_floor=float(obj.get("var_floor", VAR_FLOOR)), d=d)


def trajectory_to_dict(traj: Trajectory, spec: Optional[SsmSpec] = None) -> dict:
    out = spec_to_dict(spec) if spec is not None else {}
    out["seed"] = int(traj.seed)
    out["states"] = [_vec(z) for z in traj.states]
    out["observations"] = [None if o is None else _vec(o) for o in traj.observations]
    return out


def trajectory_from_dict(obj: dict) -> Trajectory:
    if "observations" not in obj:
        raise ValidationError("trajectory is missing 'observations'")
    obs = [None if o is None else _read_vec(o, f"observations[{t}]")
           for t, o in enumerate(obj["observations"])]
    states = obj.get("states")
    states = np.array([_read_vec(z, "states") for z in states]) if states else np.empty((0, 0))
    return Trajectory(states=states, observations=obs, seed=int(obj.get("seed", 0)))


def _gaussians(mean, var) -> list:
    return [{"mean": _vec(m), "var": _vec(v)} for m, v in zip(mean, var)]


def _read_gaussians(items, what):
    if not items:
        return None, None
    mean = np.array([_read_vec(g["mean"], what) for g in items])
    var = np.array([_read_vec(g["var"], what) for g in items])
    return mean, var


def beliefs_to_dict(bt: BeliefTrajectory) -> dict:
    out = {
        "predicted": _gaussians(bt.predicted_mean, bt.predicted_var),
        "filtered": _gaussians(bt.filtered_mean, bt.filtered_var),
        "smoothed": _gaussians(bt.smoothed_mean, bt.smoothed_var) if bt.is_smoothed else [],
        "gains": [_vec(g) for g in bt.gains] if bt.gains is not None else [],
        "cross_cov": [_vec(c) for c in bt.cross_cov] if bt.cross_cov is not None else [],
        "log_marginal": float(bt.log_marginal),
    }
    return out


def beliefs_from_dict(obj: dict) -> BeliefTrajectory:
    try:
        pm, pv = _read_gaussians(obj["predicted"], "predicted")
        fm, fv = _read_gaussians(obj["filtered"], "filtered")
        sm, sv = _read_gaussians(obj.get("smoothed"), "smoothed")
        gains = obj.get("gains")
        cross = obj.get("cross_cov")
        return BeliefTrajectory(
            predicted_mean=pm, predicted_var=pv, filtered_mean=fm, filtered_var=fv,
            log_marginal=float(obj["log_marginal"]),
            smoothed_mean=sm, smoothed_var=sv,
            gains=np.array([_read_vec(g, "gains") for g in gains]) if gains else None,
            cross_cov=np.array([_read_vec(c, "cross_cov") for c in cross]) if cross else None,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed belief file: {exc}") from exc


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
