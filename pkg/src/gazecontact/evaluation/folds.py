"""Subject-disjoint cross-validation folds stratified by (diagnosis, protocol)."""

from __future__ import annotations

import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInput
from ..numerics import Rng


@dataclass(frozen=True)
class SessionInfo:
    session_id: str
    subject_id: str
    diagnosis: str
    protocol: str


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple  # tuple of tuples of session ids (the test side of each fold)
    sessions: tuple  # SessionInfo for every session

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def test_sessions(self, k: int) -> list:
        return list(self.folds[k])

    def train_sessions(self, k: int) -> list:
        test = set(self.folds[k])
        return [s.session_id for s in self.sessions if s.session_id not in test]

    def fold_of(self) -> dict:
        return {sid: k for k, fold in enumerate(self.folds) for sid in fold}


def _subject_stratum(sessions: list) -> dict:
    """A subject's stratum is the most common (diagnosis, protocol) among its
    sessions, ties broken by sorted order."""
    by_subj = defaultdict(Counter)
    for s in sessions:
        by_subj[s.subject_id][(s.diagnosis, s.protocol)] += 1
    out = {}
    for subj, cnt in by_subj.items():
        top = max(cnt.values())
        out[subj] = min(k for k, v in cnt.items() if v == top)
    return out


def make_folds(sessions, n_folds: int = 5, rng=None) -> FoldSplit:
    """Partition subjects into ``n_folds`` test folds.

    Subjects are grouped by stratum and shuffled within it. Each subject goes
    to a fold holding the fewest subjects of its stratum, so per-stratum
    subject counts differ by at most one between folds; ties go to the fold
    with the fewest sessions, then to the next fold in round-robin order.
    """
    sessions = list(sessions)
    if n_folds < 2:
        raise DegenerateInput("need at least two folds")
    ids = [s.session_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise DegenerateInput("duplicate session ids")
    subjects = sorted({s.subject_id for s in sessions})
    if len(subjects) < n_folds:
        raise DegenerateInput(f"{len(subjects)} subjects cannot fill {n_folds} subject-disjoint folds")
    rng = rng if rng is not None else Rng(0)

    n_sess = Counter(s.subject_id for s in sessions)
    strata = defaultdict(list)
    for subj, key in sorted(_subject_stratum(sessions).items()):
        strata[key].append(subj)

    subj_fold = {}
    fold_load = np.zeros(n_folds, dtype=np.int64)
    cursor = 0
    for key in sorted(strata):
        members = strata[key]
        in_stratum = np.zeros(n_folds, dtype=np.int64)
        order = rng.substream(zlib.crc32(f"{key[0]}|{key[1]}".encode())).permutation(len(members))
        for i in order:
            subj = members[int(i)]
            target = min(range(n_folds),
                         key=lambda f: (in_stratum[f], fold_load[f], (f - cursor) % n_folds))
            subj_fold[subj] = target
            in_stratum[target] += 1
            fold_load[target] += n_sess[subj]
            cursor = (target + 1) % n_folds

    folds = [[] for _ in range(n_folds)]
    for s in sessions:
        folds[subj_fold[s.subject_id]].append(s.session_id)
    return FoldSplit(tuple(tuple(sorted(f)) for f in folds), tuple(sessions))


def check_folds(split: FoldSplit) -> list:
    """Return a list of violated properties (empty when the split is valid)."""
    problems = []
    all_ids = [s.session_id for s in split.sessions]
    seen = [sid for fold in split.folds for sid in fold]
    if sorted(seen) != sorted(all_ids):
        problems.append("folds do not cover every session exactly once")
    subj_of = {s.session_id: s.subject_id for s in split.sessions}
    for k in range(split.n_folds):
        test_subj = {subj_of[s] for s in split.test_sessions(k)}
        train_subj = {subj_of[s] for s in split.train_sessions(k)}
        if test_subj & train_subj:
            problems.append(f"fold {k} shares subjects between train and test")
        if not split.folds[k]:
            problems.append(f"fold {k} is empty")
    # stratification: subjects of each stratum spread evenly over the folds
    strata = _subject_stratum(list(split.sessions))
    fold = split.fold_of()
    first = {}
    for s in split.sessions:
        first.setdefault(s.subject_id, s.session_id)
    per = defaultdict(lambda: np.zeros(split.n_folds, dtype=np.int64))
    for subj, key in strata.items():
        per[key][fold[first[subj]]] += 1
    for key, counts in sorted(per.items()):
        if counts.max() - counts.min() > 1:
            problems.append(f"stratum {key[0]}/{key[1]} is unevenly spread: {counts.tolist()}")
    return problems


def stratum_counts(split: FoldSplit) -> np.ndarray:
    """(n_folds, n_strata) session counts per (diagnosis, protocol) stratum."""
    keys = sorted({(s.diagnosis, s.protocol) for s in split.sessions})
    info = {s.session_id: (s.diagnosis, s.protocol) for s in split.sessions}
    table = np.zeros((split.n_folds, len(keys)), dtype=np.int64)
    for k, fold in enumerate(split.folds):
        for sid in fold:
            table[k, keys.index(info[sid])] += 1
    return table
