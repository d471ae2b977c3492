"""Split a cohort into high/low-risk groups at the best-separating prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InfeasibleError, ValidationError
from ..survstats import SurvivalCurve, cox_fit_arrays, km_arrays, logrank_arrays
from ..volio import SurvivalRecord, survival_arrays


@dataclass(frozen=True)
class StratificationResult:
    threshold: float
    hr: float
    ci_low: float
    ci_high: float
    cox_p: float
    logrank_chi2: float
    logrank_p: float
    n_high: int
    n_low: int
    high_risk_ids: tuple[str, ...]
    curve_high: SurvivalCurve
    curve_low: SurvivalCurve

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "hr": self.hr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "cox_p": self.cox_p,
            "logrank_chi2": self.logrank_chi2,
            "logrank_p": self.logrank_p,
            "n_high": self.n_high,
            "n_low": self.n_low,
            "high_risk_ids": list(self.high_risk_ids),
            "curves": {"high": self.curve_high.to_dict(), "low": self.curve_low.to_dict()},
        }


def stratify(
    predictions: Sequence[float],
    records: Sequence[SurvivalRecord],
    min_group_frac: float = 0.10,
) -> StratificationResult:
    """Threshold predicted survival where the log-rank test separates best.

    Subjects predicted at or below the threshold form the high-risk group.
    Candidates are midpoints between consecutive distinct predictions that
    leave at least ``ceil(min_group_frac * N)`` subjects on each side. The
    smallest p-value is found as the largest chi-square (same ordering, no
    underflow to 0); ties go to the smaller threshold. The hazard ratio is
    high-risk vs low-risk from a univariate Cox fit on group membership.
    """
    pred = np.asarray(predictions, dtype=float)
    if pred.shape != (len(records),):
        raise ValidationError("one prediction per record is required")
    if not np.all(np.isfinite(pred)):
        raise ValidationError("predictions must be finite")
    time, event = survival_arrays(records)
    n = len(pred)
    min_size = max(1, math.ceil(min_group_frac * n))

    distinct = np.unique(pred)
    if distinct.size < 2:
        raise InfeasibleError("all predictions are equal; no threshold can split them")
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    mids = np.where(mids >= distinct[1:], distinct[:-1], mids)
    sorted_pred = np.sort(pred)
    n_high = np.searchsorted(sorted_pred, mids, side="right")
    ok = (n_high >= min_size) & (n - n_high >= min_size)
    if not ok.any():
        raise InfeasibleError(f"no threshold leaves {min_size} subjects in both groups")

    best = None
    for thr in mids[ok]:
        res = logrank_arrays(time, event, pred <= thr)
        if best is None or res.chi2 > best[1].chi2:
            best = (float(thr), res)
    thr, lr = best
    high = pred <= thr
    if not event.any():
        raise ValidationError("stratification needs at least one event")
    cox = cox_fit_arrays(high.astype(float), time, event)
    return StratificationResult(
        threshold=thr,
        hr=cox.hr,
        ci_low=cox.ci_low,
        ci_high=cox.ci_high,
        cox_p=cox.p,
        logrank_chi2=lr.chi2,
        logrank_p=lr.p,
        n_high=int(high.sum()),
        n_low=int((~high).sum()),
        high_risk_ids=tuple(r.subject_id for r, h in zip(records, high) if h),
        curve_high=km_arrays(time[high], event[high]),
        curve_low=km_arrays(time[~high], event[~high]),
    )
