"""Delimited text formats for per-frame scores, metric reports and PR curves."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInput, IoError
from ..numerics import atomic_write_text

SCORE_HEADER = ["session_id", "frame_index", "truth", "score"]


@dataclass(frozen=True)
class ScoredFrame:
    session_id: str
    frame_index: int
    truth: int
    score: float  # NaN means no prediction

    @property
    def has_prediction(self) -> bool:
        return not math.isnan(self.score)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def scores_to_csv(frames) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for f in frames:
        w.writerow([f.session_id, f.frame_index, int(f.truth), _fmt(f.score)])
    return buf.getvalue()


def write_scores(path, frames) -> None:
    atomic_write_text(path, scores_to_csv(frames))


def read_scores(path) -> list:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != SCORE_HEADER:
                raise DegenerateInput(f"{path}: expected header {','.join(SCORE_HEADER)}")
            out = []
            for n, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    sid, fi, truth, score = row
                    truth = int(truth)
                    s = float(score) if score.strip() else math.nan
                    fi = int(fi)
                except ValueError as exc:
                    raise DegenerateInput(f"{path}:{n}: malformed score row {row!r}") from exc
                if truth not in (0, 1):
                    raise DegenerateInput(f"{path}:{n}: truth must be 0 or 1")
                if not math.isnan(s) and not 0.0 <= s <= 1.0:
                    raise DegenerateInput(f"{path}:{n}: score {s} outside [0, 1]")
                out.append(ScoredFrame(sid, fi, truth, s))
            return out
    except OSError as exc:
        raise IoError(str(exc)) from exc


def frames_arrays(frames):
    """(truth, scores) arrays from scored frames."""
    t = np.array([f.truth for f in frames], dtype=np.int64)
    s = np.array([f.score for f in frames], dtype=np.float64)
    return t, s


def report_csv(report) -> str:
    lines = ["metric,value"]
    for name, value in report.rows():
        lines.append(f"{name},{value!r}" if isinstance(value, float) else f"{name},{value}")
    return "\n".join(lines) + "\n"


def pr_curve_csv(report) -> str:
    lines = ["threshold,precision,recall"]
    for t, p, r in zip(report.thresholds, report.precision, report.recall):
        lines.append(f"{float(t)!r},{float(p)!r},{float(r)!r}")
    return "\n".join(lines) + "\n"


def read_report(path) -> dict:
    """``metric,value`` CSV as a dict of floats."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if not rows or rows[0] != ["metric", "value"]:
        raise DegenerateInput(f"{path}: not a metric report")
    return {k: float(v) for k, v in rows[1:] if k}
