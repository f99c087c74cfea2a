"""Evaluation metrics and report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DegenerateInputError, GridMismatchError, SensitivityTriplet, SpectralCurve
from .io import atomic_write

REPORT_COLUMNS = ("scene", "seed", "re", "rmse_r", "rmse_g", "rmse_b", "mapping_re", "efficiency_cosine")


@dataclass
class EvaluationReport:
    re: float
    rmse_per_channel: tuple[float, float, float]
    mapping_re: float | None = None
    efficiency_cosine: float | None = None
    metadata: dict = field(default_factory=dict)

    def row(self) -> dict:
        r, g, b = self.rmse_per_channel
        return {
            "scene": self.metadata.get("scene", ""),
            "seed": self.metadata.get("seed", ""),
            "re": self.re,
            "rmse_r": r,
            "rmse_g": g,
            "rmse_b": b,
            "mapping_re": self.mapping_re,
            "efficiency_cosine": self.efficiency_cosine,
        }

    @classmethod
    def from_row(cls, row: dict) -> "EvaluationReport":
        def num(v):
            return None if v in (None, "") else float(v)

        meta = {k: row[k] for k in ("scene", "seed") if row.get(k) not in (None, "")}
        return cls(float(row["re"]), (float(row["rmse_r"]), float(row["rmse_g"]), float(row["rmse_b"])),
                   num(row.get("mapping_re")), num(row.get("efficiency_cosine")), meta)


def sensitivity_re(estimated: SensitivityTriplet, truth: SensitivityTriplet,
                   normalize: bool = False) -> EvaluationReport:
    """Channel-averaged RMSE relative to the ground-truth channel maximum.

    With ``normalize=True`` both triplets are first divided by their own maximum over
    all channels.
    """
    if estimated.grid != truth.grid:
        raise GridMismatchError("estimated and true sensitivities are on different grids")
    if normalize:
        estimated, truth = estimated.max_normalized(), truth.max_normalized()
    est, ref = estimated.as_matrix(), truth.as_matrix()
    peaks = ref.max(axis=0)
    if np.any(peaks <= 0):
        raise DegenerateInputError("a ground-truth channel has no positive response")
    rmse = np.sqrt(np.mean((est - ref) ** 2, axis=0))
    return EvaluationReport(float(np.mean(rmse / peaks)), tuple(float(v) for v in rmse))


def efficiency_cosine(a: SpectralCurve, b: SpectralCurve) -> float:
    if a.grid != b.grid:
        raise GridMismatchError("efficiency curves are on different grids")
    na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero curve")
    return float(np.clip(a.values @ b.values / (na * nb), -1.0, 1.0))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _mean_row(reports: list[EvaluationReport]) -> dict:
    rows = [r.row() for r in reports]
    out = {"scene": "mean", "seed": ""}
    for col in REPORT_COLUMNS[2:]:
        vals = [row[col] for row in rows if row[col] is not None]
        out[col] = float(np.mean(vals)) if vals else None
    return out


def report_rows(reports: list[EvaluationReport], with_mean: bool = True) -> list[dict]:
    rows = [r.row() for r in reports]
    if reports and with_mean:
        rows.append(_mean_row(reports))
    return rows


def emit_report(reports: list[EvaluationReport], path, fmt: str = "csv") -> Path:
    """Write reports in fixed column order; a 'mean' row/entry summarizes non-empty input."""
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in report_rows(reports):
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        payload = {"reports": [r.row() for r in reports],
                   "mean": _mean_row(reports) if reports else None}
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return atomic_write(path, text)


def read_report(path) -> list[EvaluationReport]:
    """Inverse of :func:`emit_report`; the summary row is dropped."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        rows = json.loads(text)["reports"]
    else:
        rows = [r for r in csv.DictReader(io.StringIO(text)) if r["scene"] != "mean"]
    return [EvaluationReport.from_row(r) for r in rows]
