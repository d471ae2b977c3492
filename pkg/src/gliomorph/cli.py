"""Command-line interface: ``gliomorph <command> [options]``.

Exit status is 0 on success, 2 for invalid input (bad files, failed
validation, infeasible requests) and 1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import GliomorphError, ParseError, ValidationError
from .morphometry import extract_features
from .rsf import ForestParams
from .volio import (
    FeatureTable,
    default_structure_map,
    read_cohort_csv,
    read_nifti,
    read_structure_map,
    write_cohort_csv,
    write_nifti,
)
from .pipeline.cv import run_cv
from .pipeline.decile import top_decile_analysis
from .pipeline.featuresets import FeatureSetSpec, group_columns
from .pipeline.report import write_report
from .pipeline.selection import screen_features
from .pipeline.stratify import stratify
from .pipeline.synth import synth_cohort, synth_volumes

log = logging.getLogger("gliomorph")


# ---------------------------------------------------------------------------
# I/O helpers


def _clean(obj):
    """Make a result JSON-safe: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _load_json(path: str):
    try:
        if path == "-":
            return json.load(sys.stdin)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None


def _load_cohort(args):
    """Records plus the feature table (feature CSV joined with clinical columns)."""
    if args.table == "-" and args.cohort == "-":
        raise ValidationError("only one of --table/--cohort may read standard input")
    records, clinical = read_cohort_csv(args.cohort, impute_missing=getattr(args, "impute_missing", False))
    if args.table is None:
        return records, clinical
    table = FeatureTable.from_csv(args.table)
    pos = {sid: i for i, sid in enumerate(table.subject_ids)}
    missing = [r.subject_id for r in records if r.subject_id not in pos]
    if missing:
        raise ValidationError(f"subjects in the cohort but not the feature table: {missing[:5]}")
    table = table.take([pos[r.subject_id] for r in records])
    return records, table.hstack(clinical) if clinical.columns else table


def _hd95_only(table: FeatureTable) -> FeatureTable:
    cols = group_columns("hd95", table.columns)
    if not cols:
        raise ValidationError("the feature table has no hd95_* columns")
    return table.select(cols)


def _forest_params(args) -> ForestParams:
    return ForestParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_split=args.min_split,
        min_leaf=args.min_leaf,
        mtry=args.mtry,
        seed=args.seed,
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_extract(args) -> int:
    if args.config:
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict) or "atlas" not in cfg or "subjects" not in cfg:
            raise ParseError("config must be an object with 'atlas' and 'subjects'")
        base = Path(args.config).parent
        atlas_path = base / cfg["atlas"]
        subjects = {str(k): base / v for k, v in cfg["subjects"].items()}
        smap_path = base / cfg["structure_map"] if cfg.get("structure_map") else None
    else:
        if not args.atlas or not (args.subjects or args.subject):
            raise ValidationError("extract needs --config, or --atlas with --subjects/--subject")
        atlas_path = Path(args.atlas)
        subjects = {}
        if args.subjects:
            for p in sorted(Path(args.subjects).glob("*.nii")):
                subjects[p.stem] = p
        for item in args.subject or []:
            sid, _, path = item.partition("=")
            if not path:
                raise ValidationError(f"--subject expects ID=PATH, got {item!r}")
            subjects[sid] = Path(path)
        smap_path = Path(args.structure_map) if args.structure_map else None
    if not subjects:
        raise ValidationError("no subject volumes found")

    smap = read_structure_map(smap_path) if smap_path else default_structure_map()
    atlas = read_nifti(atlas_path)
    volumes = {sid: read_nifti(path) for sid, path in subjects.items()}
    table = extract_features(volumes, atlas, smap, allow_unmapped=args.allow_unmapped)
    table.to_csv(args.out or "-")
    return 0


def cmd_select(args) -> int:
    records, table = _load_cohort(args)
    results = screen_features(_hd95_only(table), records, args.alpha)
    payload = {
        "alpha": args.alpha,
        "selected": [r.feature for r in results if r.selected],
        "screening": [
            {
                "feature": r.feature,
                "beta": r.fit.beta,
                "se": r.fit.se,
                "hr": r.fit.hr,
                "ci_low": r.fit.ci_low,
                "ci_high": r.fit.ci_high,
                "p": r.fit.p,
                "converged": r.fit.converged,
                "flag": r.fit.flag,
                "selected": r.selected,
            }
            for r in results
        ],
    }
    _emit(dumps(payload), args.out)
    return 0


def cmd_cv(args) -> int:
    records, table = _load_cohort(args)
    result = run_cv(
        table,
        records,
        FeatureSetSpec.parse(args.features),
        repeats=args.repeats,
        seed=args.seed,
        params=_forest_params(args),
        alpha=args.alpha,
        selection=args.selection,
        impute_missing=args.impute_missing,
        workers=args.workers,
    )
    _emit(dumps(result.to_dict()), args.out)
    return 0


def cmd_stratify(args) -> int:
    records, _ = read_cohort_csv(args.cohort, impute_missing=True)
    if args.cv:
        preds_by_id = _load_json(args.cv).get("oof_predictions")
        if not isinstance(preds_by_id, dict):
            raise ParseError(f"{args.cv}: no 'oof_predictions' object")
    else:
        table = FeatureTable.from_csv(args.predictions)
        if "prediction" not in table.columns:
            raise ParseError("predictions CSV needs a 'prediction' column")
        preds_by_id = dict(zip(table.subject_ids, table.column("prediction").tolist()))
    missing = [r.subject_id for r in records if r.subject_id not in preds_by_id]
    if missing:
        raise ValidationError(f"no prediction for subjects {missing[:5]}")
    preds = [float(preds_by_id[r.subject_id]) for r in records]
    result = stratify(preds, records, args.min_group_frac)
    _emit(dumps(result.to_dict()), args.out)
    return 0


def cmd_decile(args) -> int:
    records, table = _load_cohort(args)
    rows = top_decile_analysis(
        _hd95_only(table), records, args.alpha, exclude_censored_short=not args.include_censored_short
    )
    _emit(dumps({"rows": [r.to_dict() for r in rows]}), args.out)
    return 0


def cmd_synth(args) -> int:
    if args.volumes:
        if not args.out:
            raise ValidationError("--volumes needs --out DIR")
        out = Path(args.out)
        (out / "subjects").mkdir(parents=True, exist_ok=True)
        sv = synth_volumes(args.n, args.seed, censor_horizon=args.censor_horizon)
        write_nifti(out / "atlas.nii", sv.atlas)
        for sid, vol in sv.subjects.items():
            write_nifti(out / "subjects" / f"{sid}.nii", vol)
        (out / "structure_map.json").write_text(
            json.dumps(sv.structure_map.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        config = {
            "atlas": "atlas.nii",
            "structure_map": "structure_map.json",
            "subjects": {sid: f"subjects/{sid}.nii" for sid in sv.subjects},
        }
        (out / "config.json").write_text(dumps(config), encoding="utf-8")
        write_cohort_csv(out / "cohort.csv", sv.records, sv.clinical)
        return 0

    betas = [float(b) for b in args.betas.split(",")] if args.betas else [1.5]
    table, records = synth_cohort(
        args.n, betas, args.baseline_rate, args.censor_horizon, args.seed
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "features.csv")
        write_cohort_csv(out / "cohort.csv", records)
    else:
        write_cohort_csv(sys.stdout, records, table)
    return 0


def cmd_report(args) -> int:
    screening = _load_json(args.select)["screening"] if args.select else None
    cv_results = [_load_json(p) for p in args.cv or []]
    strat = _load_json(args.stratify) if args.stratify else None
    decile = _load_json(args.decile)["rows"] if args.decile else None
    if screening is None and not cv_results and strat is None and decile is None:
        raise ValidationError("report needs at least one of --select/--cv/--stratify/--decile")
    try:
        written = write_report(args.out, screening, cv_results, strat, decile)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"result JSON is missing or has a malformed field: {exc}") from None
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_cohort_args(p, table_required=False):
    p.add_argument("--cohort", required=True, help="cohort CSV (subject_id,time_months,event,...); '-' for stdin")
    p.add_argument("--table", required=table_required, help="feature CSV from `extract`; '-' for stdin")


def _add_forest_args(p):
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--min-split", type=int, default=6)
    p.add_argument("--min-leaf", type=int, default=3)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gliomorph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="label volumes -> morphometric feature CSV")
    p.add_argument("--config", help="JSON with atlas, subjects {id: path}, optional structure_map")
    p.add_argument("--atlas")
    p.add_argument("--subjects", help="directory of <id>.nii subject volumes")
    p.add_argument("--subject", action="append", metavar="ID=PATH")
    p.add_argument("--structure-map")
    p.add_argument("--allow-unmapped", action="store_true", help="ignore labels the map does not know")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select", help="univariate Cox screen of Hd95 features")
    _add_cohort_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cv", help="repeated cross-validated C-index of a feature set")
    _add_cohort_args(p)
    p.add_argument("--features", required=True, help="feature groups, e.g. hd95,clinical,com,cev")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--selection", choices=("fold", "global"), default="fold")
    p.add_argument("--impute-missing", action="store_true", help="fill gaps with training-fold medians")
    p.add_argument("--workers", type=int, default=None, help="processes (default: GLIOMORPH_THREADS or 1)")
    _add_forest_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("stratify", help="split subjects into risk groups by predicted survival")
    p.add_argument("--cohort", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cv", help="result JSON of `cv` (uses its out-of-fold predictions)")
    src.add_argument("--predictions", help="CSV with subject_id,prediction")
    p.add_argument("--min-group-frac", type=float, default=0.10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("decile", help="survival of subjects in the top decile of each Hd95 feature")
    _add_cohort_args(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--include-censored-short", action="store_true",
                   help="count subjects censored before the median as not short")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decile)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--betas", help="comma-separated log-hazard weights (default 1.5)")
    p.add_argument("--baseline-rate", type=float, default=0.05)
    p.add_argument("--censor-horizon", type=float, default=math.inf)
    p.add_argument("--volumes", action="store_true", help="write NIfTI volumes + cohort instead")
    p.add_argument("--out", help="output directory (default: combined CSV on stdout)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="tables and figures from saved results")
    p.add_argument("--select", help="JSON from `select`")
    p.add_argument("--cv", nargs="+", help="one or more JSON results from `cv`")
    p.add_argument("--stratify", help="JSON from `stratify`")
    p.add_argument("--decile", help="JSON from `decile`")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="gliomorph: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except GliomorphError as exc:
        print(f"gliomorph: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"gliomorph: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"gliomorph: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
