"""
Dataset I/O
-----------
Reads and writes datasets in the canonical long format:

- ``<prefix>_long.csv``: one row per (subject, visit, item):
  ``id,visit_time,item,category[,u_1,...,u_H]``; a missing answer is written ``NA``.
- ``<prefix>_subjects.csv``: one row per subject:
  ``id,T,delta_1,...,delta_P,w_1,...,w_G``.

A JSON mirror keeps both tables in a single document. Floats are written in
shortest round-trip form so that reading and re-writing a canonical file
reproduces it byte for byte.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from jmirt_architecture import (
    MISSING_CATEGORY,
    DatasetParseError,
    DatasetValidationError,
    DataViolation,
    ModelSpec,
    SubjectData,
    ValidationReport,
    ViolationType,
)
from dataset_validator import validate

logger = logging.getLogger("jmirt.io")

MISSING_TOKEN = "NA"
LONG_COLUMNS = ["id", "visit_time", "item", "category"]
JSON_FORMAT_TAG = "jmirt-dataset"


def dataset_paths(prefix) -> Tuple[Path, Path]:
    """Return the (long, subjects) CSV paths belonging to a dataset prefix."""
    prefix = str(prefix)
    return Path(f"{prefix}_long.csv"), Path(f"{prefix}_subjects.csv")


def _format_float(value: float) -> str:
    return repr(float(value))


def _parse_values(frame: pd.DataFrame, column: str, kind, source: Path, allow_missing: bool = False):
    """Convert a string column, raising DatasetParseError with the offending line."""
    parsed = []
    for row_number, raw in enumerate(frame[column].tolist()):
        text = raw.strip()
        if allow_missing and text in ("", MISSING_TOKEN):
            parsed.append(None)
            continue
        try:
            parsed.append(kind(text))
        except ValueError:
            # +2: header is line 1 and rows are 0-based
            raise DatasetParseError(
                f"{source.name}: column '{column}' holds {raw!r}, expected {kind.__name__}",
                line_number=row_number + 2,
            ) from None
    return parsed


def _read_table(path: Path, required: List[str]) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetParseError(f"{path.name}: missing columns {missing}", line_number=1)
    return frame


def _prefixed_columns(frame: pd.DataFrame, prefix: str) -> List[str]:
    columns = [c for c in frame.columns if c.startswith(prefix)]
    return sorted(columns, key=lambda c: int(c[len(prefix):]))


def _read_csv_dataset(prefix) -> List[SubjectData]:
    long_path, subjects_path = dataset_paths(prefix)
    subjects_frame = _read_table(subjects_path, ["id", "T"])
    long_frame = _read_table(long_path, LONG_COLUMNS)

    delta_cols = _prefixed_columns(subjects_frame, "delta_")
    w_cols = _prefixed_columns(subjects_frame, "w_")
    u_cols = _prefixed_columns(long_frame, "u_")

    subject_ids = _parse_values(subjects_frame, "id", int, subjects_path)
    observed = _parse_values(subjects_frame, "T", float, subjects_path)
    deltas = np.array([_parse_values(subjects_frame, c, int, subjects_path) for c in delta_cols], dtype=int).T
    ws = np.array([_parse_values(subjects_frame, c, float, subjects_path) for c in w_cols], dtype=float).T

    ids = _parse_values(long_frame, "id", int, long_path)
    times = _parse_values(long_frame, "visit_time", float, long_path)
    items = _parse_values(long_frame, "item", int, long_path)
    categories = _parse_values(long_frame, "category", int, long_path, allow_missing=True)
    visit_cov = [_parse_values(long_frame, c, float, long_path) for c in u_cols]

    bad_categories = [
        DataViolation(ids[r], ViolationType.CATEGORY_RANGE, f"category {c} below 1 (line {r + 2})")
        for r, c in enumerate(categories)
        if c is not None and c < 1
    ]
    if bad_categories:
        raise DatasetValidationError(ValidationReport(bad_categories))
    for r, item in enumerate(items):
        if item < 1:
            raise DatasetParseError(f"{long_path.name}: item index {item} below 1", line_number=r + 2)

    n_items = max(items, default=0)
    visits: Dict[int, Dict[float, Dict]] = {}
    for r, (sid, t, item, cat) in enumerate(zip(ids, times, items, categories)):
        per_subject = visits.setdefault(sid, {})
        visit = per_subject.setdefault(t, {"responses": {}, "covariates": [col[r] for col in visit_cov]})
        visit["responses"][item] = MISSING_CATEGORY if cat is None else cat

    known = set(subject_ids)
    orphans = sorted(set(visits) - known)
    if orphans:
        raise DatasetParseError(f"{long_path.name}: responses for unknown subject ids {orphans[:5]}")

    dataset = []
    for row, sid in enumerate(subject_ids):
        per_subject = visits.get(sid, {})
        visit_times = sorted(per_subject)
        responses = np.full((len(visit_times), n_items), MISSING_CATEGORY, dtype=int)
        covariates = np.zeros((len(visit_times), len(u_cols)))
        for j, t in enumerate(visit_times):
            for item, cat in per_subject[t]["responses"].items():
                responses[j, item - 1] = cat
            covariates[j] = per_subject[t]["covariates"]
        dataset.append(
            SubjectData(
                id=sid,
                visit_times=visit_times,
                responses=responses,
                baseline_covariates=ws[row] if len(w_cols) else [],
                observed_time=observed[row],
                cause_indicators=deltas[row] if len(delta_cols) else [],
                longitudinal_covariates=covariates if len(u_cols) else None,
            )
        )
    return dataset


def _write_csv_dataset(dataset: List[SubjectData], prefix) -> None:
    long_path, subjects_path = dataset_paths(prefix)
    long_path.parent.mkdir(parents=True, exist_ok=True)
    n_causes = max((len(s.cause_indicators) for s in dataset), default=0)
    n_cov = max((len(s.baseline_covariates) for s in dataset), default=0)
    n_visit_cov = max((s.longitudinal_covariates.shape[1] for s in dataset), default=0)

    subject_rows = []
    long_rows = []
    for s in dataset:
        row = {"id": s.id, "T": _format_float(s.observed_time)}
        row.update({f"delta_{p + 1}": int(d) for p, d in enumerate(s.cause_indicators)})
        row.update({f"w_{g + 1}": _format_float(w) for g, w in enumerate(s.baseline_covariates)})
        subject_rows.append(row)
        for j, t in enumerate(s.visit_times):
            covariates = {
                f"u_{h + 1}": _format_float(u) for h, u in enumerate(s.longitudinal_covariates[j])
            }
            for k, cat in enumerate(s.responses[j]):
                long_rows.append(
                    {
                        "id": s.id,
                        "visit_time": _format_float(t),
                        "item": k + 1,
                        "category": MISSING_TOKEN if cat == MISSING_CATEGORY else int(cat),
                        **covariates,
                    }
                )

    subject_columns = (
        ["id", "T"] + [f"delta_{p + 1}" for p in range(n_causes)] + [f"w_{g + 1}" for g in range(n_cov)]
    )
    long_columns = LONG_COLUMNS + [f"u_{h + 1}" for h in range(n_visit_cov)]
    pd.DataFrame(subject_rows, columns=subject_columns).to_csv(subjects_path, index=False, lineterminator="\n")
    pd.DataFrame(long_rows, columns=long_columns).to_csv(long_path, index=False, lineterminator="\n")


def _read_json_dataset(path) -> List[SubjectData]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"{path.name}: {e.msg}", line_number=e.lineno) from e
    if document.get("format") != JSON_FORMAT_TAG:
        raise DatasetParseError(f"{path.name}: not a {JSON_FORMAT_TAG} document")
    try:
        return [SubjectData.from_dict(entry) for entry in document.get("subjects", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetParseError(f"{path.name}: malformed subject entry ({e})") from e


def _write_json_dataset(dataset: List[SubjectData], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format": JSON_FORMAT_TAG, "version": 1, "subjects": [s.to_dict() for s in dataset]}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(document, indent=2))


def read_dataset(path, format: str = "csv", spec: Optional[ModelSpec] = None) -> List[SubjectData]:
    """
    Read a dataset written in the canonical CSV pair (path is the prefix) or JSON mirror.

    When a spec is given the dataset is validated against it and a
    DatasetValidationError is raised on any violation.
    """
    if format == "csv":
        dataset = _read_csv_dataset(path)
    elif format == "json":
        dataset = _read_json_dataset(path)
    else:
        raise ValueError(f"unknown dataset format '{format}'")
    logger.info(f"Read {len(dataset)} subjects from {path} ({format}).")
    if spec is not None:
        report = validate(dataset, spec)
        if not report.is_valid:
            raise DatasetValidationError(report)
    return dataset


def write_dataset(dataset: List[SubjectData], path, format: str = "csv") -> None:
    """Write a dataset as the canonical CSV pair (path is the prefix) or JSON mirror."""
    if format == "csv":
        _write_csv_dataset(dataset, path)
    elif format == "json":
        _write_json_dataset(dataset, path)
    else:
        raise ValueError(f"unknown dataset format '{format}'")
    logger.info(f"Wrote {len(dataset)} subjects to {path} ({format}).")


def collapse_causes(dataset: List[SubjectData]) -> List[SubjectData]:
    """Merge all dropout causes into a single cause (delta = any cause observed)."""
    return [
        SubjectData(
            id=s.id,
            visit_times=s.visit_times,
            responses=s.responses,
            baseline_covariates=s.baseline_covariates,
            observed_time=s.observed_time,
            cause_indicators=[int(s.cause_indicators.sum() > 0)],
            longitudinal_covariates=s.longitudinal_covariates,
        )
        for s in dataset
    ]
