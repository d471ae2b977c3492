"""Survival of subjects in the top 10% of each feature."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError, ValidationError
from ..morphometry import nearest_rank
from ..survstats import km_arrays, logrank_arrays, median_from_curve
from ..volio import FeatureTable, SurvivalRecord, survival_arrays


@dataclass(frozen=True)
class DecileRow:
    feature: str
    cutoff: float
    n_top: int
    pct_short: float | None
    logrank_p: float | None
    significant: bool
    defined: bool

    def to_dict(self) -> dict:
        return asdict(self)


def top_decile_analysis(
    features: FeatureTable,
    records: Sequence[SurvivalRecord],
    alpha: float = 0.05,
    exclude_censored_short: bool = True,
) -> list[DecileRow]:
    """Per feature: share of short survivors in the top decile and a log-rank p.

    The top group holds subjects at or above the nearest-rank 90th percentile
    of the column. Short survivors died before the cohort's KM median. With
    ``exclude_censored_short`` (default) subjects censored before the median
    have unknown status and are left out of the percentage entirely;
    otherwise they count as not short.
    """
    if features.subject_ids != tuple(r.subject_id for r in records):
        raise ValidationError("feature rows and survival records are not aligned")
    if len(records) < 10:
        raise ValidationError("top-decile analysis needs at least 10 subjects")
    time, event = survival_arrays(records)
    median = median_from_curve(km_arrays(time, event))
    if median is None:
        raise DataError("cohort median survival is undefined (KM never reaches 0.5)")
    short = event & (time < median)
    known = event | (time >= median) if exclude_censored_short else np.ones_like(event)

    rows = []
    for name in features.columns:
        col = features.column(name)
        if np.isnan(col).any():
            raise ValidationError(f"missing values in column {name!r}")
        cutoff = nearest_rank(col, 90)
        top = col >= cutoff
        n_top = int(top.sum())
        if n_top == 0 or n_top == len(col):
            rows.append(DecileRow(name, cutoff, n_top, None, None, False, False))
            continue
        denom = int((top & known).sum())
        pct = 100.0 * int((top & short).sum()) / denom if denom else None
        p = logrank_arrays(time, event, top).p
        rows.append(DecileRow(name, cutoff, n_top, pct, p, p < alpha, True))
    return rows
