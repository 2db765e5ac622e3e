"""Manifest CSV: one row per labeled frame.

Required columns follow the ingestion format; the eye-landmark and face-box
columns are optional and may be absent or empty.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, IoError
from .numerics import atomic_write_text

COLUMNS = [
    "session_id", "subject_id", "frame_index", "image_path", "label",
    "yaw", "pitch", "roll", "landmark_available", "diagnosis", "protocol",
]
EYE_COLUMNS = ["left_eye_x", "left_eye_y", "right_eye_x", "right_eye_y"]
BOX_COLUMNS = ["box_x", "box_y", "box_w", "box_h"]


@dataclass
class ManifestRow:
    session_id: str
    subject_id: str
    frame_index: int
    image_path: str
    label: int
    yaw: float | None = None
    pitch: float | None = None
    roll: float | None = None
    landmark_available: bool = False
    diagnosis: str = ""
    protocol: str = ""
    eyes: tuple | None = None
    box: tuple | None = None

    @property
    def has_pose(self) -> bool:
        return self.yaw is not None and self.pitch is not None

    @property
    def key(self):
        return (self.session_id, self.frame_index)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(round(float(v), 6))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _opt_float(s: str):
    s = s.strip()
    return float(s) if s else None


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes"):
        return True
    if s in ("", "0", "false", "no"):
        return False
    raise DegenerateInput(f"bad boolean {s!r}")


def write_manifest(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS + EYE_COLUMNS + BOX_COLUMNS)
    for r in rows:
        eyes = r.eyes if r.eyes is not None else (None,) * 4
        box = r.box if r.box is not None else (None,) * 4
        w.writerow([
            r.session_id, r.subject_id, r.frame_index, r.image_path, r.label,
            _fmt(r.yaw), _fmt(r.pitch), _fmt(r.roll), int(bool(r.landmark_available)),
            r.diagnosis, r.protocol, *(_fmt(v) for v in eyes), *(_fmt(v) for v in box),
        ])
    atomic_write_text(path, buf.getvalue())


def read_manifest(path) -> list:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rows = []
    seen = set()
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DegenerateInput(f"{path}: manifest lacks columns {missing}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                label = int(rec["label"])
                if label not in (0, 1):
                    raise ValueError("label must be 0 or 1")
                eyes = None
                if all(rec.get(c, "").strip() for c in EYE_COLUMNS):
                    eyes = tuple(float(rec[c]) for c in EYE_COLUMNS)
                box = None
                if all(rec.get(c, "").strip() for c in BOX_COLUMNS):
                    box = tuple(float(rec[c]) for c in BOX_COLUMNS)
                row = ManifestRow(
                    session_id=rec["session_id"],
                    subject_id=rec["subject_id"],
                    frame_index=int(rec["frame_index"]),
                    image_path=rec["image_path"],
                    label=label,
                    yaw=_opt_float(rec["yaw"]),
                    pitch=_opt_float(rec["pitch"]),
                    roll=_opt_float(rec["roll"]),
                    landmark_available=_parse_bool(rec["landmark_available"]),
                    diagnosis=rec["diagnosis"],
                    protocol=rec["protocol"],
                    eyes=eyes,
                    box=box,
                )
            except (ValueError, KeyError) as exc:
                raise DegenerateInput(f"{path}:{lineno}: {exc}") from exc
            if row.key in seen:
                raise DegenerateInput(f"{path}:{lineno}: duplicate (session_id, frame_index) {row.key}")
            seen.add(row.key)
            rows.append(row)
    return rows


def resolve_image(manifest_path, row: ManifestRow) -> str:
    if os.path.isabs(row.image_path):
        return row.image_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), row.image_path)
