"""Imaging features in atlas space: per-structure Hd95, tumor center of mass and volumes.

Distances between border voxels are measured between voxel centers in mm.
For integer index offsets ``(di, dj, dk)`` and spacing ``(sx, sy, sz)`` the
distance is ``sqrt((di*sx)**2 + (dj*sy)**2 + (dk*sz)**2)``, evaluated in that
order. Working from integer offsets makes every Hd95 exactly symmetric and
exactly invariant to translating both masks by a whole number of voxels.

Hd95 pools the directed nearest-border distances A->B and B->A into one
multiset and takes its nearest-rank 95th percentile. Tools that instead report
``max(p95(A->B), p95(B->A))`` can give larger values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DataError, ValidationError
from .volio import TUMOR_COMPONENTS, FeatureTable, LabelVolume, StructureMap

# Neighbours fetched per query point before falling back to a radius search
# for distance ties.
_K_CANDIDATES = 16
_TIE_RTOL = 1e-9
_TIE_ATOL = 1e-12


class EmptyBorderError(ValidationError):
    """hd95 was called with an empty border; apply the fallback first."""


@dataclass(frozen=True, eq=False)
class BorderPointSet:
    points: np.ndarray  # (n, 3) int64 voxel indices, lexicographic order
    spacing: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.points)


def _label_boxes(volume: LabelVolume, labels: Iterable[int]) -> list:
    labels = [lab for lab in labels if lab > 0]
    if not labels:
        return []
    return ndimage.find_objects(volume.labels, max_label=max(labels))


def _union_box(boxes: list, labels: Iterable[int]):
    lo, hi = None, None
    for lab in labels:
        if lab <= 0 or lab > len(boxes) or boxes[lab - 1] is None:
            continue
        box = boxes[lab - 1]
        start = np.array([s.start for s in box])
        stop = np.array([s.stop for s in box])
        lo = start if lo is None else np.minimum(lo, start)
        hi = stop if hi is None else np.maximum(hi, stop)
    if lo is None:
        return None
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))


def _mask_in_box(volume: LabelVolume, labels: frozenset[int], boxes: list):
    box = _union_box(boxes, labels)
    if box is None:
        return None, None
    crop = volume.labels[box]
    mask = np.isin(crop, np.fromiter(labels, dtype=np.int64))
    return mask, np.array([s.start for s in box], dtype=np.int64)


def _border_of_mask(mask: np.ndarray, origin: np.ndarray) -> np.ndarray:
    # Everything outside the tight bounding box is background, so padding with
    # False also covers voxels on the volume edge.
    p = np.pad(mask, 1, constant_values=False)
    interior = (
        p[:-2, 1:-1, 1:-1] & p[2:, 1:-1, 1:-1]
        & p[1:-1, :-2, 1:-1] & p[1:-1, 2:, 1:-1]
        & p[1:-1, 1:-1, :-2] & p[1:-1, 1:-1, 2:]
    )
    return np.argwhere(mask & ~interior).astype(np.int64) + origin


def extract_border(volume: LabelVolume, labels: Iterable[int]) -> BorderPointSet:
    """Voxels of the mask with at least one face neighbour outside it.

    The volume edge counts as outside. Points are returned in lexicographic
    (x, y, z) order.
    """
    labels = frozenset(int(v) for v in labels)
    if not labels:
        raise ValidationError("label set must be non-empty")
    mask, origin = _mask_in_box(volume, labels, _label_boxes(volume, labels))
    if mask is None:
        return BorderPointSet(np.empty((0, 3), dtype=np.int64), volume.spacing)
    return BorderPointSet(_border_of_mask(mask, origin), volume.spacing)


def _pair_distances(p: np.ndarray, q: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    diff = p - q
    dx = diff[..., 0] * spacing[0]
    dy = diff[..., 1] * spacing[1]
    dz = diff[..., 2] * spacing[2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def nearest_distances(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance (mm) from each point of ``src`` to its nearest point in ``dst``.

    A kd-tree proposes candidates; the returned value is always the minimum of
    the exact integer-offset formula, including among tied candidates.
    """
    sp = np.asarray(spacing, dtype=float)
    tree = cKDTree(dst * sp)
    k = min(_K_CANDIDATES, len(dst))
    dist, idx = tree.query(src * sp, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    exact = _pair_distances(src[:, None, :], dst[idx], sp).min(axis=1)
    if k < len(dst):
        radius = dist[:, 0] * (1.0 + _TIE_RTOL) + _TIE_ATOL
        crowded = np.nonzero(dist[:, -1] <= radius)[0]
        if crowded.size:
            found = tree.query_ball_point(src[crowded] * sp, radius[crowded])
            for row, cand in zip(crowded, found):
                exact[row] = _pair_distances(src[row], dst[np.asarray(cand)], sp).min()
    return exact


def nearest_rank(values: np.ndarray, percent: int) -> float:
    """Nearest-rank percentile: the ceil(percent/100 * n)-th smallest value."""
    n = len(values)
    if n == 0:
        raise ValidationError("percentile of an empty set")
    rank = -(-percent * n // 100)
    return float(np.partition(values, rank - 1)[rank - 1])


def hd95(a: BorderPointSet, b: BorderPointSet) -> float:
    if len(a) == 0 or len(b) == 0:
        raise EmptyBorderError("hd95 needs two non-empty borders")
    if a.spacing != b.spacing:
        raise ValidationError(f"spacing mismatch: {a.spacing} vs {b.spacing}")
    pooled = np.concatenate([
        nearest_distances(a.points, b.points, a.spacing),
        nearest_distances(b.points, a.points, a.spacing),
    ])
    return nearest_rank(pooled, 95)


def _check_grids(subject: LabelVolume, atlas: LabelVolume) -> None:
    if not subject.same_grid(atlas):
        raise ValidationError(
            f"subject grid {subject.dims}/{subject.spacing} differs from "
            f"atlas grid {atlas.dims}/{atlas.spacing}"
        )


def _fallback_voxel(mask: np.ndarray, origin: np.ndarray) -> np.ndarray:
    idx = np.argwhere(mask)
    com = idx.sum(axis=0) / len(idx)
    # Nearest voxel center per axis; exact halves go to the lower index.
    return (np.ceil(com - 0.5).astype(np.int64) + origin)[None, :]


def _structure_hd95(subject, atlas, labels, subject_boxes, atlas_boxes) -> float:
    atlas_mask, atlas_origin = _mask_in_box(atlas, labels, atlas_boxes)
    if atlas_mask is None:
        raise DataError(f"atlas contains no voxel with labels {sorted(labels)}")
    atlas_border = BorderPointSet(_border_of_mask(atlas_mask, atlas_origin), atlas.spacing)
    subj_mask, subj_origin = _mask_in_box(subject, labels, subject_boxes)
    if subj_mask is None:
        subj_points = _fallback_voxel(atlas_mask, atlas_origin)
    else:
        subj_points = _border_of_mask(subj_mask, subj_origin)
    return hd95(BorderPointSet(subj_points, subject.spacing), atlas_border)


def structure_hd95(
    subject: LabelVolume, atlas: LabelVolume, structure: str, structure_map: StructureMap
) -> float:
    """Hd95 (mm) between a structure in the warped subject and in the atlas.

    A structure missing from the subject is replaced by the single voxel
    nearest to the atlas structure's center of mass.
    """
    _check_grids(subject, atlas)
    try:
        labels = structure_map.labels_of(structure)
    except KeyError:
        raise ValidationError(f"unknown structure {structure!r}") from None
    return _structure_hd95(
        subject, atlas, labels, _label_boxes(subject, labels), _label_boxes(atlas, labels)
    )


def center_of_mass(volume: LabelVolume, labels: Iterable[int]) -> tuple[float, float, float] | None:
    """Mean voxel-center position (mm) of the labelled voxels; None if there are none."""
    labels = frozenset(int(v) for v in labels)
    mask, origin = _mask_in_box(volume, labels, _label_boxes(volume, labels))
    if mask is None:
        return None
    idx = np.argwhere(mask)
    mean = idx.sum(axis=0) / len(idx) + origin
    return tuple(float(m * s) for m, s in zip(mean, volume.spacing))


def component_volumes(volume: LabelVolume, structure_map: StructureMap) -> dict[str, float]:
    """Volume in mL of each tumor component, plus ``cev`` (the enhancing core)."""
    counts = np.bincount(volume.labels.ravel())
    out = {}
    for name in TUMOR_COMPONENTS:
        lab = structure_map.component_label(name)
        n = int(counts[lab]) if lab is not None and lab < len(counts) else 0
        out[name] = n * volume.voxel_volume_mm3 / 1000.0
    out["cev"] = out["enhancing"]
    return out


def feature_columns(structure_map: StructureMap) -> list[str]:
    return (
        [f"hd95_{name}" for name in structure_map.structure_names]
        + ["com_x", "com_y", "com_z", "cev"]
        + [f"tcv_{name}" for name in TUMOR_COMPONENTS]
    )


@dataclass(frozen=True)
class FeatureRow:
    hd95: dict[str, float]
    com: tuple[float, float, float] | None
    cev: float
    tcv: dict[str, float] = field(default_factory=dict)

    def values(self) -> list[float]:
        com = self.com if self.com is not None else (math.nan,) * 3
        return (
            list(self.hd95.values())
            + list(com)
            + [self.cev]
            + [self.tcv[name] for name in TUMOR_COMPONENTS]
        )


def _check_labels_mapped(volume: LabelVolume, structure_map: StructureMap, what: str) -> None:
    present = np.unique(volume.labels)
    unknown = sorted(set(present.tolist()) - structure_map.known_labels)
    if unknown:
        raise ValidationError(f"{what} contains labels not in the structure map: {unknown[:10]}")


def extract_feature_row(
    subject: LabelVolume,
    atlas: LabelVolume,
    structure_map: StructureMap,
    allow_unmapped: bool = False,
) -> FeatureRow:
    _check_grids(subject, atlas)
    if not allow_unmapped:
        _check_labels_mapped(subject, structure_map, "subject")
        _check_labels_mapped(atlas, structure_map, "atlas")
    all_labels = structure_map.known_labels
    subject_boxes = _label_boxes(subject, all_labels)
    atlas_boxes = _label_boxes(atlas, all_labels)
    hd = {
        name: _structure_hd95(subject, atlas, labels, subject_boxes, atlas_boxes)
        for name, labels in structure_map.structures
    }
    vols = component_volumes(subject, structure_map)
    return FeatureRow(
        hd95=hd,
        com=center_of_mass(subject, structure_map.tumor_labels),
        cev=vols["cev"],
        tcv={name: vols[name] for name in TUMOR_COMPONENTS},
    )


def extract_features(
    subjects: Mapping[str, LabelVolume],
    atlas: LabelVolume,
    structure_map: StructureMap,
    allow_unmapped: bool = False,
) -> FeatureTable:
    rows = [
        extract_feature_row(vol, atlas, structure_map, allow_unmapped).values()
        for vol in subjects.values()
    ]
    columns = feature_columns(structure_map)
    return FeatureTable(
        tuple(subjects), tuple(columns), np.array(rows, dtype=float).reshape(len(rows), len(columns))
    )
