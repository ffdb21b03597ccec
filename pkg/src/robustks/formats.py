"""On-disk formats: wide gap CSV, long logit CSV, and the JSON alpha report."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from robustks import __version__
from robustks.errors import DataValidationError
from robustks.model_metrics import LogitGapMatrix, logit_gap

WIDE_FIXED = ("point_id", "label")
LONG_HEADER = ("model_id", "point_id", "logit_pos", "logit_neg", "label")


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _parse_float(text, where):
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataValidationError(f"{where}: non-finite value {text!r}")
    return value


def _parse_label(text, where):
    if text.strip() not in ("0", "1"):
        raise DataValidationError(f"{where}: label must be 0 or 1, got {text!r}")
    return int(text)


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataValidationError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    return rows[0], rows[1:]


def load_wide(path) -> LogitGapMatrix:
    header, rows = _read_rows(path)
    header = [h.strip() for h in header]
    if tuple(header[:2]) != WIDE_FIXED or len(header) < 3:
        raise DataValidationError(f"{path}: header must be point_id,label,<model ids...>")
    model_ids = header[2:]
    if len(set(model_ids)) != len(model_ids):
        raise DataValidationError(f"{path}: duplicate model ids in header")
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    gaps = np.empty((len(model_ids), len(rows)))
    labels, point_ids = [], []
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataValidationError(f"{path}: line {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            if cell.strip() == "":
                raise DataValidationError(f"{path}: line {r}, column {header[c]!r} is empty")
        point_ids.append(row[0])
        labels.append(_parse_label(row[1], f"{path}: line {r}"))
        for k, cell in enumerate(row[2:]):
            gaps[k, r - 2] = _parse_float(cell, f"{path}: line {r}, column {model_ids[k]!r}")
    if len(set(point_ids)) != len(point_ids):
        raise DataValidationError(f"{path}: duplicate point ids")
    return LogitGapMatrix(gaps, np.array(labels), model_ids, point_ids)


def load_long(path) -> LogitGapMatrix:
    header, rows = _read_rows(path)
    if tuple(h.strip() for h in header) != LONG_HEADER:
        raise DataValidationError(f"{path}: header must be {','.join(LONG_HEADER)}")
    models, points, cells, labels = {}, {}, {}, {}
    for r, row in enumerate(rows, start=2):
        where = f"{path}: line {r}"
        if len(row) != len(LONG_HEADER):
            raise DataValidationError(f"{where}: expected {len(LONG_HEADER)} cells, got {len(row)}")
        model, point = row[0], row[1]
        gap = logit_gap(_parse_float(row[2], where), _parse_float(row[3], where))
        label = _parse_label(row[4], where)
        models.setdefault(model, len(models))
        points.setdefault(point, len(points))
        if (model, point) in cells:
            raise DataValidationError(f"{where}: duplicate entry for model {model!r}, point {point!r}")
        if labels.setdefault(point, label) != label:
            raise DataValidationError(f"{where}: conflicting labels for point {point!r}")
        cells[(model, point)] = gap
    if not cells:
        raise DataValidationError(f"{path}: no data rows")
    gaps = np.full((len(models), len(points)), np.nan)
    for (model, point), gap in cells.items():
        gaps[models[model], points[point]] = gap
    if len(cells) != gaps.size:
        k, j = np.argwhere(np.isnan(gaps))[0]
        raise DataValidationError(
            f"{path}: incomplete grid ({len(cells)} of {gaps.size} model/point pairs); "
            f"e.g. model {list(models)[k]!r} lacks point {list(points)[j]!r}"
        )
    return LogitGapMatrix(gaps, np.array([labels[p] for p in points]), list(models), list(points))


def load_gaps(path, format: str = "wide") -> LogitGapMatrix:
    if format == "wide":
        return load_wide(path)
    if format == "long":
        return load_long(path)
    raise DataValidationError(f"unknown gap file format {format!r}")


def save_wide(matrix: LogitGapMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*WIDE_FIXED, *matrix.model_ids])
        for j, pid in enumerate(matrix.point_ids):
            writer.writerow([pid, int(matrix.labels[j]), *(format_float(g) for g in matrix.gaps[:, j])])


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class AlphaReport:
    alpha_hat: float
    per_bootstrap: list
    reject_all_count: int
    tau: float
    delta: float
    B: int
    alpha_grid: list
    model_index: int
    model_id: str
    n_points: int
    n_models: int
    seed: int
    config: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AlphaReport":
        data = json.loads(text)
        try:
            return cls(**data)
        except TypeError as exc:
            raise DataValidationError(f"not an alpha report: {exc}") from exc

    @classmethod
    def from_estimate(cls, est, matrix: LogitGapMatrix, model_index: int, config: dict) -> "AlphaReport":
        return cls(
            alpha_hat=est.alpha_hat,
            per_bootstrap=list(est.per_bootstrap),
            reject_all_count=est.reject_all_count,
            tau=est.tau,
            delta=est.delta,
            B=est.B,
            alpha_grid=list(est.alpha_grid),
            model_index=int(model_index),
            model_id=matrix.model_ids[model_index],
            n_points=matrix.n_points,
            n_models=matrix.n_models,
            seed=est.seed,
            config=dict(config),
        )
