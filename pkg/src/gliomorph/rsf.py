"""Random survival forest with log-rank splitting and Kaplan-Meier leaves.

Each tree is grown on a bootstrap sample drawn from a generator seeded by
``(seed, tree_index)``, so a forest does not depend on the order in which its
trees are built. A subject's prediction is the restricted mean of the
average of the leaf curves it reaches, truncated at the largest in-bag event
time of the forest.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _forest_kernels as kernels
from .errors import ValidationError
from .survstats import SurvivalCurve, rmst
from .volio import FeatureTable, SurvivalRecord, survival_arrays

log = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_split: int = 6
    min_leaf: int = 3
    mtry: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1 or None")
        if self.min_split < 1 or self.min_leaf < 1:
            raise ValidationError("min_split and min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValidationError("mtry must be >= 1 or None")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        if self.mtry > n_features:
            raise ValidationError(f"mtry={self.mtry} exceeds the {n_features} features")
        return self.mtry


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks leaf nodes."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    leaf_offsets: np.ndarray
    leaf_times: np.ndarray
    leaf_probs: np.ndarray

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_offsets) - 1

    def leaf_curve(self, k: int) -> SurvivalCurve:
        a, b = self.leaf_offsets[k], self.leaf_offsets[k + 1]
        return SurvivalCurve(self.leaf_times[a:b], self.leaf_probs[a:b])

    def apply(self, X: np.ndarray) -> np.ndarray:
        return kernels.apply_tree(
            np.ascontiguousarray(X, dtype=float),
            self.feature, self.threshold, self.left, self.right, self.leaf,
        )


@dataclass(frozen=True, eq=False)
class ForestModel:
    feature_names: tuple[str, ...]
    params: ForestParams
    trees: tuple[Tree, ...]
    training_t_max: float
    flags: tuple[str, ...] = ()
    _leaf_rmst: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if not self._leaf_rmst:
            cache = tuple(
                kernels.leaf_rmst(t.leaf_offsets, t.leaf_times, t.leaf_probs, self.training_t_max)
                for t in self.trees
            )
            object.__setattr__(self, "_leaf_rmst", cache)

    # -- prediction ---------------------------------------------------------

    def _matrix(self, rows) -> np.ndarray:
        if isinstance(rows, FeatureTable):
            X = rows.select(self.feature_names).values
        elif isinstance(rows, Mapping):
            try:
                X = np.array([[float(rows[name]) for name in self.feature_names]])
            except KeyError as exc:
                raise ValidationError(f"row lacks feature {exc.args[0]!r}") from None
        else:
            X = np.atleast_2d(np.asarray(rows, dtype=float))
            if X.shape[1] != len(self.feature_names):
                raise ValidationError(
                    f"expected {len(self.feature_names)} feature values, got {X.shape[1]}"
                )
        if np.isnan(X).any():
            raise ValidationError("missing feature value in prediction input")
        return X

    def predict_curve(self, row) -> SurvivalCurve:
        X = self._matrix(row)
        if len(X) != 1:
            raise ValidationError("predict_curve takes a single row")
        curves = [tree.leaf_curve(int(tree.apply(X)[0])) for tree in self.trees]
        grid = np.unique(np.concatenate([c.times for c in curves]))
        total = np.zeros(grid.size)
        for c in curves:
            total += c(grid)
        return SurvivalCurve(grid, total / len(curves))

    def predict_expected(self, row) -> float:
        return rmst(self.predict_curve(row), self.training_t_max)

    def predict_expected_many(self, rows) -> np.ndarray:
        """Expected survival for many rows.

        The restricted mean is linear in the curve, so averaging each leaf's
        own restricted mean gives the same value as :meth:`predict_expected`
        up to rounding.
        """
        X = self._matrix(rows)
        total = np.zeros(len(X))
        for tree, cache in zip(self.trees, self._leaf_rmst):
            total += cache[tree.apply(X)]
        return total / len(self.trees)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        trees = []
        for t in self.trees:
            trees.append({
                "feature": [self.feature_names[f] if f >= 0 else None for f in t.feature.tolist()],
                "threshold": [x if f >= 0 else None for f, x in zip(t.feature.tolist(), t.threshold.tolist())],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaf": t.leaf.tolist(),
                "leaves": [
                    {"times": t.leaf_curve(k).times.tolist(), "probs": t.leaf_curve(k).probs.tolist()}
                    for k in range(t.n_leaves)
                ],
            })
        return {
            "feature_names": list(self.feature_names),
            "params": asdict(self.params),
            "training_t_max": self.training_t_max,
            "flags": list(self.flags),
            "trees": trees,
        }

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, no whitespace, shortest round-trip floats."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ForestModel":
        names = tuple(data["feature_names"])
        pos = {n: i for i, n in enumerate(names)}
        trees = []
        for t in data["trees"]:
            times, probs, offsets = [], [], [0]
            for lf in t["leaves"]:
                times.extend(lf["times"])
                probs.extend(lf["probs"])
                offsets.append(len(times))
            trees.append(Tree(
                feature=np.array([pos[f] if f is not None else -1 for f in t["feature"]], np.int64),
                threshold=np.array([x if x is not None else 0.0 for x in t["threshold"]], float),
                left=np.array(t["left"], np.int64),
                right=np.array(t["right"], np.int64),
                leaf=np.array(t["leaf"], np.int64),
                leaf_offsets=np.array(offsets, np.int64),
                leaf_times=np.array(times, float),
                leaf_probs=np.array(probs, float),
            ))
        return cls(names, ForestParams(**data["params"]), tuple(trees),
                   float(data["training_t_max"]), tuple(data.get("flags", ())))

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        return cls.from_dict(json.loads(text))


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, index]))


def fit_arrays(
    X: np.ndarray,
    time: np.ndarray,
    event: np.ndarray,
    feature_names: Sequence[str],
    params: ForestParams = ForestParams(),
) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=float)
    time = np.ascontiguousarray(time, dtype=float)
    event = np.ascontiguousarray(event, dtype=bool)
    n, p = X.shape
    if p == 0:
        raise ValidationError("random survival forest needs at least one feature")
    if np.isnan(X).any():
        raise ValidationError("missing values in forest training features")
    if n < params.min_split:
        raise ValidationError(f"need at least min_split={params.min_split} subjects, got {n}")
    if not event.any():
        raise ValidationError("forest training data contains no events")
    mtry = params.resolved_mtry(p)
    max_depth = params.max_depth or 0

    flags = []
    if np.all(X == X[0], axis=0).all():
        flags.append("all features constant")
        log.warning("all forest features are constant; trees will be single leaves")

    trees = []
    t_max = -math.inf
    for k in range(params.n_trees):
        rng = _tree_rng(params.seed, k)
        inbag = rng.integers(0, n, size=n)
        keys = rng.random((2 * n, p))
        parts = kernels.grow_tree(
            X, time, event, inbag, keys, mtry, params.min_split, params.min_leaf, max_depth
        )
        trees.append(Tree(*parts))
        in_events = time[inbag][event[inbag]]
        if in_events.size:
            t_max = max(t_max, float(in_events.max()))
    if t_max == -math.inf:
        t_max = float(time.max())
        flags.append("no in-bag events; horizon is the largest observed time")
    return ForestModel(tuple(feature_names), params, tuple(trees), t_max, tuple(flags))


def fit(
    features: FeatureTable,
    records: Sequence[SurvivalRecord],
    params: ForestParams = ForestParams(),
) -> ForestModel:
    if features.subject_ids != tuple(r.subject_id for r in records):
        raise ValidationError("feature rows and survival records are not aligned")
    time, event = survival_arrays(records)
    return fit_arrays(features.values, time, event, features.columns, params)


def predict_curve(model: ForestModel, row) -> SurvivalCurve:
    return model.predict_curve(row)


def predict_expected(model: ForestModel, row) -> float:
    return model.predict_expected(row)
