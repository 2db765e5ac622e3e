"""Face-detection and landmark availability on eye-contact frames, per group."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInput


@dataclass(frozen=True)
class AvailabilityRow:
    group: str
    sessions: int
    frames: int
    face_mean: float  # percent
    face_std: float
    landmark_mean: float
    landmark_std: float


def availability_rates(session_ids, groups, truth, face_found, landmark_available,
                       all_label: str = "All") -> list:
    """Per-session availability percentages over truth-positive frames,
    aggregated to mean and (population) standard deviation per group.

    The last row pools every session under ``all_label``.
    """
    sid = np.asarray(session_ids)
    grp = np.asarray(groups)
    pos = np.asarray(truth).astype(bool)
    face = np.asarray(face_found).astype(bool)
    lm = np.asarray(landmark_available).astype(bool)
    per_session = {}
    for s in np.unique(sid[pos]):
        m = pos & (sid == s)
        per_session[s] = (grp[m][0], m.sum(), 100.0 * face[m].mean(), 100.0 * lm[m].mean())
    if not per_session:
        raise DegenerateInput("no eye-contact frames to measure availability on")
    by_group = defaultdict(list)
    for s in sorted(per_session):
        by_group[per_session[s][0]].append(per_session[s])
    rows = []
    for g in sorted(by_group):
        rows.append(_row(str(g), by_group[g]))
    rows.append(_row(all_label, list(per_session.values())))
    return rows


def _row(name, entries):
    frames = int(sum(e[1] for e in entries))
    f = np.array([e[2] for e in entries])
    lm = np.array([e[3] for e in entries])
    return AvailabilityRow(name, len(entries), frames, float(f.mean()), float(f.std()),
                           float(lm.mean()), float(lm.std()))


def format_rate(mean: float, std: float) -> str:
    """Percent with two decimals, followed by the std in parentheses."""
    return f"{mean:.2f}% ({std:.2f})"


def availability_csv(rows) -> str:
    lines = ["group,sessions,frames,face_detected,landmarks_found"]
    for r in rows:
        lines.append(f"{r.group},{r.sessions},{r.frames},{format_rate(r.face_mean, r.face_std)},"
                     f"{format_rate(r.landmark_mean, r.landmark_std)}")
    return "\n".join(lines) + "\n"
