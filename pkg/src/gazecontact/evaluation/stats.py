"""Dataset statistics: fixed-bin histograms of face position and head pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSITION_BINS = 50
ANGLE_BINS = 36
ANGLE_RANGE = (-90.0, 90.0)
HIST_NAMES = ("center_x", "center_y", "yaw", "pitch", "roll")


@dataclass(frozen=True)
class DatasetStats:
    position_edges: np.ndarray
    angle_edges: np.ndarray
    counts: dict  # name -> int array

    def total(self, name: str) -> int:
        return int(self.counts[name].sum())


def _hist(values, edges):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    # values on the upper edge fall in the last bin; out-of-range values are clipped in
    v = np.clip(v, edges[0], edges[-1])
    counts, _ = np.histogram(v, bins=edges)
    return counts.astype(np.int64)


def dataset_stats(centers_x=(), centers_y=(), yaw=(), pitch=(), roll=()) -> DatasetStats:
    """Histograms of normalized face centres in [0, 1] (50 bins) and of pose
    angles in [-90, 90] degrees (36 bins of 5 degrees). Missing values (NaN)
    are skipped."""
    pe = np.linspace(0.0, 1.0, POSITION_BINS + 1)
    ae = np.linspace(ANGLE_RANGE[0], ANGLE_RANGE[1], ANGLE_BINS + 1)
    counts = {
        "center_x": _hist(centers_x, pe),
        "center_y": _hist(centers_y, pe),
        "yaw": _hist(yaw, ae),
        "pitch": _hist(pitch, ae),
        "roll": _hist(roll, ae),
    }
    return DatasetStats(pe, ae, counts)


def stats_csv(stats: DatasetStats) -> str:
    lines = ["histogram,bin_low,bin_high,count"]
    for name in HIST_NAMES:
        edges = stats.position_edges if name.startswith("center") else stats.angle_edges
        for lo, hi, c in zip(edges[:-1], edges[1:], stats.counts[name]):
            lines.append(f"{name},{lo:.6g},{hi:.6g},{int(c)}")
    return "\n".join(lines) + "\n"


def chi_square_uniform(counts) -> float:
    """Pearson chi-square statistic of ``counts`` against a flat histogram."""
    c = np.asarray(counts, dtype=np.float64)
    expected = c.sum() / c.size
    if expected == 0:
        return 0.0
    return float(np.sum((c - expected) ** 2 / expected))
