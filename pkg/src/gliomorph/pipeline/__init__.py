"""Experiment workflows built on the core modules."""

from .cv import CVResult, FoldTrace, run_cv
from .decile import DecileRow, top_decile_analysis
from .featuresets import FeatureSetSpec
from .selection import select_features
from .stratify import StratificationResult, stratify
from .synth import synth_cohort, synth_two_group, synth_volumes

__all__ = [
    "CVResult",
    "DecileRow",
    "FeatureSetSpec",
    "FoldTrace",
    "StratificationResult",
    "run_cv",
    "select_features",
    "stratify",
    "synth_cohort",
    "synth_two_group",
    "synth_volumes",
]
