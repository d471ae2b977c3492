"""Univariate Cox screening of Hd95 features."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..survstats import CoxFit, cox_fit_arrays
from ..volio import FeatureTable, SurvivalRecord, survival_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScreenResult:
    feature: str
    fit: CoxFit
    selected: bool


def screen_arrays(values, columns, time, event, alpha=0.05) -> list[ScreenResult]:
    out = []
    for j, name in enumerate(columns):
        fit = cox_fit_arrays(values[:, j], time, event)
        if not fit.converged:
            log.warning("Cox fit for %s did not converge (%s); feature dropped", name, fit.flag)
        out.append(ScreenResult(name, fit, bool(fit.converged and fit.p < alpha)))
    return out


def screen_features(
    table: FeatureTable, records: Sequence[SurvivalRecord], alpha: float = 0.05
) -> list[ScreenResult]:
    time, event = survival_arrays(records)
    return screen_arrays(table.values, table.columns, time, event, alpha)


def select_features(
    table: FeatureTable, records: Sequence[SurvivalRecord], alpha: float = 0.05
) -> list[str]:
    """Columns whose univariate Cox Wald p-value is below ``alpha``, in table order."""
    return [r.feature for r in screen_features(table, records, alpha) if r.selected]


def select_arrays(values: np.ndarray, columns, time, event, alpha=0.05) -> list[str]:
    return [r.feature for r in screen_arrays(values, columns, time, event, alpha) if r.selected]
