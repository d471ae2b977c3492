"""Repeated leave-5-out cross-validation of the selection + forest workflow."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ValidationError
from ..rsf import ForestParams, fit_arrays
from ..survstats import Z_95, c_index_arrays
from ..volio import FeatureTable, SurvivalRecord, survival_arrays
from .featuresets import FeatureSetSpec
from .selection import select_arrays

log = logging.getLogger(__name__)

FOLD_SIZE = 5


@dataclass(frozen=True)
class FoldTrace:
    """What one fold actually fed into selection and fitting."""

    repeat: int
    fold: int
    test_ids: tuple[str, ...]
    selection_ids: tuple[str, ...]
    fit_ids: tuple[str, ...]
    selected: tuple[str, ...]
    fit_columns: tuple[str, ...]


@dataclass
class CVResult:
    feature_set: str
    mean_cindex: float
    ci_low: float
    ci_high: float
    per_repeat: list[float]
    selection_freq: dict[str, float]
    oof_predictions: dict[str, float]
    n_folds: int
    seed: int
    selection_mode: str
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CVResult":
        return cls(**data)


# predictor(train_table, train_time, train_event, test_table, forest_params) -> predictions
Predictor = Callable[[FeatureTable, np.ndarray, np.ndarray, FeatureTable, ForestParams], np.ndarray]


def forest_predictor(train, time, event, test, params):
    model = fit_arrays(train.values, time, event, train.columns, params)
    return model.predict_expected_many(test.values)


def make_folds(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle and cut into consecutive folds of 5 (the last may be smaller)."""
    perm = rng.permutation(n)
    return [perm[i:i + FOLD_SIZE] for i in range(0, n, FOLD_SIZE)]


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def _impute_fold(train: FeatureTable, test: FeatureTable):
    fill = train.column_medians()
    if np.isnan(fill).any():
        raise ValidationError("a feature column is entirely missing in a training fold")
    return train.impute(fill), test.impute(fill)


@dataclass
class _RepeatOutcome:
    cindex: float | None
    predictions: np.ndarray | None
    selected_counts: dict[str, int]
    n_folds: int
    flags: list[str]
    traces: list[FoldTrace]


def _run_repeat(
    repeat: int,
    table: FeatureTable,
    time: np.ndarray,
    event: np.ndarray,
    hd95_cols: list[str],
    other_cols: list[str],
    seed: int,
    params: ForestParams,
    alpha: float,
    global_selection: list[str] | None,
    predictor: Predictor,
    impute_missing: bool,
    record_traces: bool,
) -> _RepeatOutcome:
    n = len(table)
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), repeat]))
    folds = make_folds(n, rng)
    preds = np.full(n, np.nan)
    counts = {c: 0 for c in hd95_cols}
    flags: list[str] = []
    traces: list[FoldTrace] = []

    for k, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        tr_time, tr_event = time[train_idx], event[train_idx]
        if not tr_event.any():
            msg = f"repeat {repeat} fold {k}: training set has no events; repeat aborted"
            log.warning(msg)
            return _RepeatOutcome(None, None, {}, 0, [msg], traces)

        train = table.take(train_idx)
        test = table.take(test_idx)
        if impute_missing:
            train, test = _impute_fold(train, test)
        selection_ids: tuple[str, ...] = ()
        if hd95_cols:
            if global_selection is None:
                sel_table = train.select(hd95_cols)
                selection_ids = sel_table.subject_ids
                selected = select_arrays(sel_table.values, sel_table.columns, tr_time, tr_event, alpha)
            else:
                selected = list(global_selection)
            for c in selected:
                counts[c] += 1
            if not selected and not other_cols:
                selected = list(hd95_cols)
                flags.append(f"repeat {repeat} fold {k}: no Hd95 feature selected; using all")
        else:
            selected = []

        columns = selected + other_cols
        train_x, test_x = train.select(columns), test.select(columns)
        fold_params = ForestParams(
            n_trees=params.n_trees,
            max_depth=params.max_depth,
            min_split=params.min_split,
            min_leaf=params.min_leaf,
            mtry=params.mtry if params.mtry is None else min(params.mtry, len(columns)),
            seed=_derived_seed(seed & (2**64 - 1), repeat, k),
        )
        if record_traces:
            traces.append(FoldTrace(
                repeat, k, test.subject_ids, selection_ids, train_x.subject_ids,
                tuple(selected), tuple(columns),
            ))
        preds[test_idx] = predictor(train_x, tr_time, tr_event, test_x, fold_params)

    if np.isnan(preds).any():
        raise RuntimeError("out-of-fold predictions do not cover every subject")
    return _RepeatOutcome(
        c_index_arrays(preds, time, event), preds, counts, len(folds), flags, traces
    )


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    try:
        return max(1, int(os.environ.get("GLIOMORPH_THREADS", "1")))
    except ValueError:
        return 1


def run_cv(
    features: FeatureTable,
    records: Sequence[SurvivalRecord],
    spec: FeatureSetSpec,
    repeats: int = 100,
    seed: int = 0,
    params: ForestParams = ForestParams(),
    alpha: float = 0.05,
    selection: str = "fold",
    predictor: Predictor | None = None,
    hook: Callable[[FoldTrace], None] | None = None,
    impute_missing: bool = False,
    workers: int | None = None,
) -> CVResult:
    """Repeated K-fold CV with K = ceil(N/5), reshuffling folds every repeat.

    Hd95 selection runs inside each training fold (``selection="fold"``) or
    once on the whole cohort (``selection="global"``). The C-index of each
    repeat is computed on its pooled out-of-fold predictions. ``hook``
    receives a :class:`FoldTrace` per fold.
    """
    if features.subject_ids != tuple(r.subject_id for r in records):
        raise ValidationError("feature rows and survival records are not aligned")
    if len(records) < 10:
        raise ValidationError("cross-validation needs at least 10 subjects")
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    if selection not in ("fold", "global"):
        raise ValidationError("selection must be 'fold' or 'global'")
    hd95_cols, other_cols = spec.resolve(features.columns)
    used = features.select(hd95_cols + other_cols)
    if not impute_missing and used.missing_columns():
        raise ValidationError(f"missing values in columns {used.missing_columns()}")
    time, event = survival_arrays(records)

    global_sel = None
    if selection == "global" and hd95_cols:
        hd = features.select(hd95_cols)
        global_sel = select_arrays(hd.values, hd.columns, time, event, alpha)

    args = (used, time, event, hd95_cols, other_cols, seed, params, alpha, global_sel)
    n_workers = _worker_count(workers)
    if n_workers > 1 and predictor is None and hook is None:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [
                pool.submit(_run_repeat, r, *args, forest_predictor, impute_missing, False)
                for r in range(repeats)
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [
            _run_repeat(r, *args, predictor or forest_predictor, impute_missing, hook is not None)
            for r in range(repeats)
        ]

    flags: list[str] = []
    scores: list[float] = []
    pred_sum = np.zeros(len(records))
    pred_n = 0
    counts = {c: 0 for c in hd95_cols}
    n_folds = 0
    for r, out in enumerate(outcomes):
        flags.extend(out.flags)
        if hook is not None:
            for trace in out.traces:
                hook(trace)
        if out.predictions is None:
            continue
        if out.cindex is None:
            flags.append(f"repeat {r}: no comparable pairs")
            continue
        scores.append(out.cindex)
        pred_sum += out.predictions
        pred_n += 1
        n_folds += out.n_folds
        for c, v in out.selected_counts.items():
            counts[c] += v
    if not scores:
        raise ValidationError("every cross-validation repeat was aborted")

    arr = np.array(scores)
    mean = float(arr.mean())
    half = Z_95 * float(arr.std(ddof=1)) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return CVResult(
        feature_set=spec.label,
        mean_cindex=mean,
        ci_low=mean - half,
        ci_high=mean + half,
        per_repeat=[float(s) for s in scores],
        selection_freq={c: counts[c] / n_folds for c in hd95_cols},
        oof_predictions={sid: float(v) for sid, v in zip(features.subject_ids, pred_sum / pred_n)},
        n_folds=n_folds,
        seed=int(seed),
        selection_mode=selection,
        flags=flags,
    )
