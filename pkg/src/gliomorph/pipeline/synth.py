"""Synthetic cohorts: tabular survival data and small labelled brain volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..volio import FeatureTable, LabelVolume, StructureMap, SurvivalRecord


def _ids(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n)))
    return tuple(f"S{i + 1:0{width}d}" for i in range(n))


def _survival(rng, hazard: np.ndarray, censor_horizon: float):
    """Exponential event times; censoring uniform on (0, horizon]."""
    t_event = rng.exponential(1.0 / hazard)
    u = rng.random(len(hazard))
    if math.isinf(censor_horizon):
        return t_event, np.ones(len(hazard), dtype=bool)
    t_censor = censor_horizon * (1.0 - u)
    return np.minimum(t_event, t_censor), t_event <= t_censor


def _records(ids, time, event) -> list[SurvivalRecord]:
    return [SurvivalRecord(sid, float(t), bool(e)) for sid, t, e in zip(ids, time, event)]


def synth_cohort(
    n: int,
    betas: Sequence[float],
    baseline_rate: float = 0.05,
    censor_horizon: float = math.inf,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> tuple[FeatureTable, list[SurvivalRecord]]:
    """Standard-normal features with exponential survival, hazard rate * exp(x @ betas)."""
    if n < 2:
        raise ValidationError("a synthetic cohort needs at least 2 subjects")
    if not baseline_rate > 0:
        raise ValidationError("baseline_rate must be positive")
    if not censor_horizon > 0:
        raise ValidationError("censor_horizon must be positive")
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 1 or betas.size == 0:
        raise ValidationError("betas must be a non-empty list")
    names = list(names) if names is not None else [f"hd95_f{j:02d}" for j in range(betas.size)]
    if len(names) != betas.size:
        raise ValidationError("one name per beta is required")

    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 1]))
    x = rng.standard_normal((n, betas.size))
    time, event = _survival(rng, baseline_rate * np.exp(x @ betas), censor_horizon)
    ids = _ids(n)
    return FeatureTable(ids, tuple(names), x), _records(ids, time, event)


def synth_two_group(
    n: int,
    hazard_ratio: float = 3.0,
    baseline_rate: float = 0.05,
    censor_horizon: float = math.inf,
    seed: int = 0,
    marker_noise: float = 0.5,
) -> tuple[FeatureTable, list[SurvivalRecord], np.ndarray]:
    """Two exponential populations; ``hd95_marker`` is the noisy group indicator.

    Returns the table, the records and the true membership (True = high hazard).
    """
    if n < 2:
        raise ValidationError("a synthetic cohort needs at least 2 subjects")
    if not (hazard_ratio > 0 and baseline_rate > 0):
        raise ValidationError("hazard_ratio and baseline_rate must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 2]))
    group = rng.random(n) < 0.5
    marker = group + marker_noise * rng.standard_normal(n)
    noise = rng.standard_normal(n)
    hazard = baseline_rate * np.where(group, hazard_ratio, 1.0)
    time, event = _survival(rng, hazard, censor_horizon)
    ids = _ids(n)
    table = FeatureTable(ids, ("hd95_marker", "hd95_noise"), np.column_stack([marker, noise]))
    return table, _records(ids, time, event), group


# ---------------------------------------------------------------------------
# Volumes

SYNTH_GRID = (40, 48, 32)
SYNTH_SPACING = (1.2, 1.0, 1.5)
WHITE_MATTER = 2

# name, label, box (lo, hi) in voxels; x < 20 is the subject's right side.
_SYNTH_STRUCTURES = (
    ("right_caudate", 50, ((12, 16), (26, 32), (16, 22))),
    ("left_caudate", 11, ((24, 28), (26, 32), (16, 22))),
    ("right_putamen", 51, ((7, 11), (20, 28), (12, 20))),
    ("left_putamen", 12, ((29, 33), (20, 28), (12, 20))),
    ("right_thalamus", 49, ((13, 18), (14, 20), (14, 20))),
    ("left_thalamus", 10, ((22, 27), (14, 20), (14, 20))),
    ("right_lateral_ventricle", 43, ((15, 18), (22, 36), (20, 25))),
    ("left_lateral_ventricle", 4, ((22, 25), (22, 36), (20, 25))),
    ("brain_stem", 16, ((18, 22), (8, 14), (4, 16))),
)
_TUMOR_LABELS = {"edema": 100, "enhancing": 101, "nonenhancing": 102, "cavity": 103}


def synth_structure_map() -> StructureMap:
    return StructureMap(
        tuple((name, frozenset([lab])) for name, lab, _ in _SYNTH_STRUCTURES),
        tuple(_TUMOR_LABELS.items()),
        frozenset([WHITE_MATTER]),
    )


def _brain_mask(shape) -> np.ndarray:
    grid = np.indices(shape, dtype=float)
    centre = [(s - 1) / 2 for s in shape]
    radii = [s / 2 - 1.5 for s in shape]
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, centre, radii))
    return r2 <= 1.0


def synth_atlas() -> LabelVolume:
    labels = np.zeros(SYNTH_GRID, dtype=np.int16)
    labels[_brain_mask(SYNTH_GRID)] = WHITE_MATTER
    for _, lab, box in _SYNTH_STRUCTURES:
        labels[tuple(slice(lo, hi) for lo, hi in box)] = lab
    return LabelVolume(labels, SYNTH_SPACING)


@dataclass(frozen=True)
class SynthVolumes:
    atlas: LabelVolume
    subjects: dict[str, LabelVolume]
    structure_map: StructureMap
    records: list[SurvivalRecord]
    clinical: FeatureTable


def _subject_volume(rng) -> tuple[np.ndarray, float, int]:
    """One subject: displaced structures plus a layered tumor. Returns (labels, radius, side)."""
    shape = SYNTH_GRID
    side = int(rng.random() < 0.5)  # 1 = left hemisphere
    radius = float(rng.uniform(3.0, 8.0))
    cx = rng.uniform(24, 31) if side else rng.uniform(9, 16)
    centre = np.array([cx, rng.uniform(16, 32), rng.uniform(10, 22)])

    labels = np.zeros(shape, dtype=np.int16)
    labels[_brain_mask(shape)] = WHITE_MATTER
    for _, lab, box in _SYNTH_STRUCTURES:
        lo = np.array([b[0] for b in box], dtype=float)
        hi = np.array([b[1] for b in box], dtype=float)
        mid = (lo + hi) / 2
        away = mid - centre
        dist = max(float(np.linalg.norm(away)), 1.0)
        # Mass effect: push structures away from the tumor, more when it is large and close.
        push = min(radius * radius / dist, 6.0) * away / dist
        shift = np.rint(push + rng.normal(0, 0.3, 3)).astype(int)
        lo_i = np.clip(lo.astype(int) + shift, 0, np.array(shape) - 1)
        hi_i = np.clip(hi.astype(int) + shift, lo_i + 1, np.array(shape))
        labels[tuple(slice(a, b) for a, b in zip(lo_i, hi_i))] = lab

    grid = np.indices(shape, dtype=float)
    r = np.sqrt(sum((g - c) ** 2 for g, c in zip(grid, centre)))
    labels[r <= radius + 2.0] = _TUMOR_LABELS["edema"]
    labels[r <= radius] = _TUMOR_LABELS["enhancing"]
    labels[r <= radius - 1.5] = _TUMOR_LABELS["nonenhancing"]
    if rng.random() < 0.3:
        labels[r <= radius * 0.5] = _TUMOR_LABELS["cavity"]
    return labels, radius, side


def synth_volumes(
    n: int = 30,
    seed: int = 0,
    baseline_rate: float = 1.0 / 15.0,
    censor_horizon: float = 60.0,
) -> SynthVolumes:
    """Atlas plus ``n`` tumor-bearing subjects whose survival depends on tumor size and side.

    Clinical columns ``age``, ``kps`` and ``mgmt`` also shift the hazard.
    """
    if n < 2:
        raise ValidationError("a synthetic cohort needs at least 2 subjects")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 3]))
    ids = _ids(n)
    subjects, radius, side = {}, np.empty(n), np.empty(n)
    for i, sid in enumerate(ids):
        labels, radius[i], side[i] = _subject_volume(rng)
        subjects[sid] = LabelVolume(labels, SYNTH_SPACING)
    age = np.round(rng.normal(60, 10, n))
    kps = rng.choice([60.0, 70.0, 80.0, 90.0, 100.0], n)
    mgmt = (rng.random(n) < 0.4).astype(float)
    log_hazard = (
        0.35 * (radius - 5.5)
        + 0.5 * side
        + 0.03 * (age - 60)
        - 0.02 * (kps - 80)
        - 0.6 * mgmt
    )
    time, event = _survival(rng, baseline_rate * np.exp(log_hazard), censor_horizon)
    clinical = FeatureTable(ids, ("age", "kps", "mgmt"), np.column_stack([age, kps, mgmt]))
    return SynthVolumes(
        synth_atlas(), subjects, synth_structure_map(), _records(ids, time, event), clinical
    )
