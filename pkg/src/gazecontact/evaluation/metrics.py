"""Confusion-matrix scores and threshold sweeps for imbalanced binary detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInput


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DegenerateInput("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0


def f1(c: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 when there are no true positives."""
    if c.tp == 0:
        return 0.0
    p, r = c.precision, c.recall
    return 2.0 * p * r / (p + r)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 whenever a marginal is empty."""
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def counts_at(truth, scores, threshold: float) -> ConfusionCounts:
    """Counts when frames with ``score >= threshold`` are called positive.

    ``NaN`` scores (no prediction) are never called positive.
    """
    t = np.asarray(truth).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    pred = np.zeros(t.shape, dtype=bool)
    ok = ~np.isnan(s)
    pred[ok] = s[ok] >= threshold
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    tn = int(t.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


@dataclass(frozen=True)
class MetricsReport:
    max_f1: float
    max_mcc: float
    auc_pr: float
    precision_at_max_f1: float
    recall_at_max_f1: float
    threshold_at_max_f1: float
    n_frames: int
    n_positive: int
    n_no_prediction: int
    # PR curve, one point per distinct score, thresholds descending
    thresholds: np.ndarray = field(compare=False, repr=False, default=None)
    precision: np.ndarray = field(compare=False, repr=False, default=None)
    recall: np.ndarray = field(compare=False, repr=False, default=None)
    f1_curve: np.ndarray = field(compare=False, repr=False, default=None)
    mcc_curve: np.ndarray = field(compare=False, repr=False, default=None)

    def rows(self):
        """(metric, value) pairs in report order."""
        return [
            ("max_f1", self.max_f1),
            ("max_mcc", self.max_mcc),
            ("auc_pr", self.auc_pr),
            ("precision_at_max_f1", self.precision_at_max_f1),
            ("recall_at_max_f1", self.recall_at_max_f1),
            ("threshold_at_max_f1", self.threshold_at_max_f1),
            ("n_frames", self.n_frames),
            ("n_positive", self.n_positive),
            ("n_no_prediction", self.n_no_prediction),
        ]


def _check(truth, scores):
    t = np.asarray(truth).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if t.shape != s.shape:
        raise DegenerateInput("truth and scores differ in length")
    if not np.all((t == 0) | (t == 1)):
        raise DegenerateInput("truth labels must be 0 or 1")
    if t.sum() == 0 or t.sum() == t.size:
        raise DegenerateInput("threshold sweep needs both positive and negative frames")
    return t, s


def _report(thr, tp, fp, n_pos, n_total, n_missing):
    fn = n_pos - tp
    tn = (n_total - n_pos) - fp
    f1s = np.array([f1(ConfusionCounts(int(a), int(b), int(c), int(d))) for a, b, c, d in zip(tp, fp, tn, fn)])
    mccs = np.array([mcc(ConfusionCounts(int(a), int(b), int(c), int(d))) for a, b, c, d in zip(tp, fp, tn, fn)])
    prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    rec = tp / n_pos
    prev = np.concatenate([[0.0], rec[:-1]])
    ap = float(np.sum((rec - prev) * prec))
    if thr.size:
        best = int(np.argmax(f1s))
        values = (float(f1s[best]), float(mccs.max()), ap, float(prec[best]), float(rec[best]), float(thr[best]))
    else:
        values = (0.0, 0.0, 0.0, 0.0, 0.0, math.nan)
    return MetricsReport(*values, n_total, n_pos, n_missing,
                         thresholds=thr, precision=prec, recall=rec, f1_curve=f1s, mcc_curve=mccs)


def sweep_thresholds(truth, scores) -> MetricsReport:
    """Evaluate every distinct score as a cut-off (``score >= t`` is positive).

    Average precision is ``sum (R_i - R_{i-1}) P_i`` over thresholds in
    descending order. ``NaN`` scores never become positive, so a positive
    frame without a prediction is always a false negative.
    """
    t, s = _check(truth, scores)
    ok = ~np.isnan(s)
    st, ss = t[ok], s[ok]
    order = np.argsort(-ss, kind="stable")
    ss, st = ss[order], st[order]
    # last index of each run of equal scores
    if ss.size:
        ends = np.flatnonzero(np.r_[ss[1:] != ss[:-1], True])
    else:
        ends = np.zeros(0, dtype=np.intp)
    ctp = np.cumsum(st)
    tp = ctp[ends]
    fp = (ends + 1) - tp
    return _report(ss[ends], tp, fp, int(t.sum()), t.size, int((~ok).sum()))


def sweep_thresholds_naive(truth, scores) -> MetricsReport:
    """Reference sweep that recounts the confusion matrix from scratch at every threshold."""
    t, s = _check(truth, scores)
    thr = np.unique(s[~np.isnan(s)])[::-1]
    tp, fp = [], []
    for th in thr:
        c = counts_at(t, s, th)
        tp.append(c.tp)
        fp.append(c.fp)
    return _report(thr, np.array(tp, dtype=np.int64), np.array(fp, dtype=np.int64),
                   int(t.sum()), t.size, int(np.isnan(s).sum()))


def reports_equal(a: MetricsReport, b: MetricsReport) -> bool:
    """Exact equality of scalar metrics and of every PR-curve array."""
    if a != b:
        return False
    for name in ("thresholds", "precision", "recall", "f1_curve", "mcc_curve"):
        if not np.array_equal(getattr(a, name), getattr(b, name)):
            return False
    return True
