"""Named feature groups and their resolution to table columns.

Columns are classified by name: ``hd95_*`` (Hd95), ``com_x/y/z`` (CoM),
``cev`` (CEV), ``tcv_*`` (TCV), ``age`` (Age). Every other column is a
clinical covariate; ``age`` belongs to both Age and Clinical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from ..errors import ValidationError

GROUPS = ("hd95", "clinical", "com", "cev", "tcv", "age")
_DISPLAY = {"hd95": "Hd95", "clinical": "Clinical", "com": "CoM", "cev": "CEV", "tcv": "TCV", "age": "Age"}
COM_COLUMNS = ("com_x", "com_y", "com_z")


def column_group(name: str) -> str:
    if name.startswith("hd95_"):
        return "hd95"
    if name in COM_COLUMNS:
        return "com"
    if name == "cev":
        return "cev"
    if name.startswith("tcv_"):
        return "tcv"
    return "clinical"


def group_columns(group: str, columns: Sequence[str]) -> list[str]:
    if group == "age":
        return [c for c in columns if c == "age"]
    return [c for c in columns if column_group(c) == group]


@dataclass(frozen=True)
class FeatureSetSpec:
    groups: tuple[str, ...]

    def __post_init__(self):
        if not self.groups:
            raise ValidationError("feature set needs at least one group")
        for g in self.groups:
            if g not in GROUPS:
                raise ValidationError(f"unknown feature group {g!r}; choose from {GROUPS}")
        if len(set(self.groups)) != len(self.groups):
            raise ValidationError("feature group listed twice")

    @classmethod
    def parse(cls, text: str) -> "FeatureSetSpec":
        """Parse ``"hd95,clinical"`` or ``"Hd95 + Clinical + CoM"``."""
        parts = [p.strip().lower() for p in re.split(r"[,+]", text) if p.strip()]
        return cls(tuple(parts))

    @property
    def label(self) -> str:
        return " + ".join(_DISPLAY[g] for g in self.groups)

    @property
    def uses_hd95(self) -> bool:
        return "hd95" in self.groups

    def resolve(self, columns: Sequence[str]) -> tuple[list[str], list[str]]:
        """(Hd95 columns subject to selection, other columns used as-is)."""
        hd95: list[str] = []
        other: list[str] = []
        for g in self.groups:
            cols = group_columns(g, columns)
            if not cols:
                raise ValidationError(f"feature group {_DISPLAY[g]} matches no column")
            target = hd95 if g == "hd95" else other
            target.extend(c for c in cols if c not in hd95 and c not in other)
        return hd95, other
