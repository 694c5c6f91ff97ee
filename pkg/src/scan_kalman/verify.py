"""Cross-checks: sequential vs parallel inference, and both vs the dense oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import oracle, parallel, sequential
from .model import SsmSpec
from .scan import ScanPlan

PARITY_TOL = 1e-8
ORACLE_TOL = 1e-9
ORDER_TOL = 1e-12


@dataclass
class Check:
    name: str
    value: float
    tol: float
    where: str = ""

    @property
    def ok(self) -> bool:
        return bool(self.value <= self.tol)

    def line(self) -> str:
        status = "ok  " if self.ok else "FAIL"
        loc = f"  worst at {self.where}" if self.where else ""
        return f"{status} {self.name:<28} {self.value:.3e} (tol {self.tol:.0e}){loc}"


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def worst(self) -> Optional[Check]:
        """First failing check in pipeline order; later stages inherit upstream errors."""
        failing = [c for c in self.checks if not c.ok]
        return failing[0] if failing else None

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks] + [f"note: {n}" for n in self.notes]


def _compare(name, got, ref, tol, relative: bool, label: str) -> Check:
    got, ref = np.asarray(got, dtype=float), np.asarray(ref, dtype=float)
    err = np.abs(got - ref)
    if relative:
        err = err / np.maximum(np.abs(ref), 1.0)
    if err.ndim == 0:
        return Check(name, float(err), tol, label)
    idx = np.unravel_index(int(np.argmax(err)), err.shape)
    where = f"{label}[t={idx[0]}" + (f", i={idx[1]}]" if len(idx) > 1 else "]")
    return Check(name, float(err[idx]), tol, where)


def _fields(name, got, ref, fields, tol, relative):
    checks = [_compare(f"{name}", getattr(got, f), getattr(ref, f), tol, relative, f)
              for f in fields]
    return max(checks, key=lambda c: c.value)


def variance_order_check(bt, tol: float = ORDER_TOL) -> Check:
    """max over t of violations of smoothed <= filtered <= predicted (t >= 1)."""
    v1 = bt.filtered_var[1:] - bt.predicted_var
    v2 = bt.smoothed_var - bt.filtered_var
    worst1, worst2 = float(v1.max()), float(v2.max())
    if worst1 >= worst2:
        idx = np.unravel_index(int(np.argmax(v1)), v1.shape)
        return Check("variance ordering", worst1, tol, f"filtered_var[t={idx[0] + 1}, i={idx[1]}]")
    idx = np.unravel_index(int(np.argmax(v2)), v2.shape)
    return Check("variance ordering", worst2, tol, f"smoothed_var[t={idx[0]}, i={idx[1]}]")


def verify(spec: SsmSpec, obs=None, plan: Optional[ScanPlan] = None,
           combine_filter: Callable = parallel.combine_filter,
           combine_smooth: Callable = parallel.combine_smooth,
           parity_tol: float = PARITY_TOL, oracle_tol: float = ORACLE_TOL) -> VerifyReport:
    if obs is not None:
        spec = spec.with_observations(obs)
    report = VerifyReport()
    seq = sequential.smooth(spec)
    par_f = parallel.parallel_filter(spec, plan=plan, combine=combine_filter)
    par = parallel.parallel_smooth(spec, par_f, plan, combine=combine_smooth)

    report.checks.append(_fields("filter parity", par, seq,
                                 ("predicted_mean", "predicted_var", "filtered_mean",
                                  "filtered_var"), parity_tol, True))
    report.checks.append(_compare("log-marginal parity", par.log_marginal, seq.log_marginal,
                                  parity_tol, True, "log_marginal"))
    report.checks.append(_fields("smoother parity", par, seq,
                                 ("smoothed_mean", "smoothed_var", "gains", "cross_cov"),
                                 parity_tol, True))
    report.checks.append(variance_order_check(seq))
    report.checks[-1].name = "variance ordering (seq)"
    report.checks.append(variance_order_check(par))
    report.checks[-1].name = "variance ordering (par)"

    size = spec.d * (spec.T + 1)
    if size > oracle.MAX_DENSE:
        report.notes.append(f"oracle section skipped: d*(T+1) = {size} > {oracle.MAX_DENSE}")
        return report
    ref = oracle.dense_joint_inference(spec)
    report.checks.append(_fields("oracle filtered", seq, ref, ("filtered_mean", "filtered_var"),
                                 oracle_tol, False))
    report.checks.append(_fields("oracle smoothed", seq, ref, ("smoothed_mean", "smoothed_var"),
                                 oracle_tol, False))
    report.checks.append(_compare("oracle cross-cov", seq.cross_cov, ref.cross_cov, oracle_tol,
                                  False, "cross_cov"))
    report.checks.append(Check("oracle log-evidence", abs(seq.log_marginal - ref.log_evidence),
                               oracle_tol, "log_marginal"))
    return report


def corrupted_combine_filter(e1, e2):
    """Deliberately wrong filter combine (biased offset), for exercising the
    failure path of ``verify``."""
    out = parallel.combine_filter(e1, e2)
    return out._replace(fb=out.fb + 1e-3 * e1.fc * e2.jj)
