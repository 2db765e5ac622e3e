"""Choosing the child's face among several detections per frame, and scoring
detections against ground-truth boxes by intersection over union."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .classifiers import OnlineLogRegModel, online_update
from .errors import DegenerateInput, IoError
from .imaging import FacePatch, resize_array

CHILD_CLASS = 0


@dataclass(frozen=True)
class DetectionBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0
    frame_index: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateInput(f"box must have positive size, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self):
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def as_list(self):
        return [self.x, self.y, self.w, self.h, self.score]


def iou(a: DetectionBox, b: DetectionBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    # written symmetrically so iou(a, b) and iou(b, a) round identically;
    # edge arithmetic can overshoot the box area by an ulp, hence the clamp
    return min(1.0, inter / ((a.area + b.area) - inter))


def match_boxes(predicted, truth, threshold: float):
    """Greedy one-to-one matching in order of decreasing IoU.

    Returns a list of (pred_idx, truth_idx, iou) for pairs at or above ``threshold``.
    """
    pairs = []
    for i, p in enumerate(predicted):
        for j, t in enumerate(truth):
            v = iou(p, t)
            if v >= threshold and v > 0.0:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_t, out = set(), set(), []
    for nv, i, j in pairs:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        out.append((i, j, -nv))
    return out


def evaluate_detections(predicted: dict, truth: dict, iou_threshold: float = 0.5):
    """Pooled precision and recall over frames.

    ``predicted`` and ``truth`` map frame index to a list of boxes. Frames
    missing from one side count as having no boxes there.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise DegenerateInput("IoU threshold must be in (0, 1)")
    n_pred = n_true = n_match = 0
    for frame in sorted(set(predicted) | set(truth)):
        p = predicted.get(frame, [])
        t = truth.get(frame, [])
        n_pred += len(p)
        n_true += len(t)
        n_match += len(match_boxes(p, t, iou_threshold))
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_true if n_true else 0.0
    return precision, recall


# ---------------------------------------------------------------------------
# detections on disk


def read_detections(path) -> dict:
    """JSON lines ``{"frame": int, "boxes": [[x, y, w, h, score], ...]}`` -> {frame: [DetectionBox]}."""
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    frame = int(obj["frame"])
                    boxes = [DetectionBox(*map(float, b[:5]), frame_index=frame) if len(b) >= 5
                             else DetectionBox(*map(float, b[:4]), frame_index=frame) for b in obj["boxes"]]
                except (ValueError, KeyError, TypeError) as exc:
                    raise DegenerateInput(f"{path}:{n}: malformed detection line") from exc
                if frame in out:
                    raise DegenerateInput(f"{path}:{n}: frame {frame} listed twice")
                out[frame] = boxes
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return out


def detections_jsonl(frames: dict) -> str:
    lines = []
    for frame in sorted(frames):
        lines.append(json.dumps({"frame": int(frame), "boxes": [b.as_list() for b in frames[frame]]}))
    return "\n".join(lines) + ("\n" if lines else "")


def crop_box(image: np.ndarray, box: DetectionBox, out_size: int = 32) -> FacePatch:
    """Crop a box (clipped to the image) and resize to ``out_size`` square."""
    h, w = image.shape[:2]
    x0 = int(np.clip(np.floor(box.x), 0, w - 1))
    y0 = int(np.clip(np.floor(box.y), 0, h - 1))
    x1 = int(np.clip(np.ceil(box.x + box.w), x0 + 1, w))
    y1 = int(np.clip(np.ceil(box.y + box.h), y0 + 1, h))
    crop = image[y0:y1, x0:x1]
    if crop.ndim == 2:
        crop = crop[..., None]
    out = resize_array(crop.astype(np.float64), out_size, out_size)
    return FacePatch(np.clip(np.rint(out), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# appearance embedding


class HistogramEmbedding:
    """Grey-level histogram (64 bins) followed by an 8x8 downsampled
    intensity map, scaled to unit length. Stands in for a learned face
    descriptor.

    Only the central ``crop`` fraction of the patch is described, which keeps
    the background around a detection from dominating the histogram.
    """

    bins = 64
    grid = 8

    def __init__(self, crop: float = 0.6):
        if not 0.0 < crop <= 1.0:
            raise DegenerateInput("crop fraction must be in (0, 1]")
        self.crop = crop

    @property
    def dim(self) -> int:
        return self.bins + self.grid * self.grid

    def __call__(self, patch: FacePatch) -> np.ndarray:
        g = patch.gray()
        h, w = g.shape
        my, mx = int(h * (1.0 - self.crop) / 2.0), int(w * (1.0 - self.crop) / 2.0)
        g = g[my:h - my, mx:w - mx]
        hist, _ = np.histogram(g, bins=self.bins, range=(0.0, 256.0))
        hist = hist / max(1, g.size)
        small = resize_array(np.ascontiguousarray(g)[..., None], self.grid, self.grid)[..., 0].ravel() / 255.0
        v = np.concatenate([hist * 4.0, small])
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


# ---------------------------------------------------------------------------
# online selection


@dataclass(frozen=True)
class SelectionState:
    classes: int
    model: OnlineLogRegModel
    prototypes: np.ndarray  # (classes, dim) running means
    counts: np.ndarray  # embeddings absorbed per class
    frames_seen: int = 0
    bootstrap_frames: int = 5
    warmup_updates: int = 10
    center: tuple | None = field(default=None)  # frame centre used for the bootstrap tie-break
    feature_mean: np.ndarray | None = None  # running mean of every embedding seen
    seen: int = 0
    feature_scale: float = 10.0

    @classmethod
    def create(cls, classes: int, dim: int, learning_rate: float = 0.05, bootstrap_frames: int = 5,
               warmup_updates: int = 10, center=None, feature_scale: float = 10.0) -> "SelectionState":
        model = OnlineLogRegModel.create(classes, dim, learning_rate)
        return cls(classes, model, np.zeros((classes, dim)), np.zeros(classes, dtype=np.int64), 0,
                   bootstrap_frames, warmup_updates, center, np.zeros(dim), 0, feature_scale)

    def features(self, emb: np.ndarray) -> np.ndarray:
        """Classifier input: the embedding centred on the stream mean and scaled.

        Raw descriptors of different faces are nearly parallel, so centring is
        what makes them linearly distinguishable for a model without bias
        tricks.
        """
        return (emb - self.feature_mean) * self.feature_scale


def _cosine_scores(state: SelectionState, emb: np.ndarray) -> np.ndarray:
    """Cosine similarity to each used class prototype, both centred on the stream mean."""
    out = np.full(state.classes, -np.inf)
    e = emb - state.feature_mean
    for c in range(state.classes):
        if state.counts[c]:
            p = state.prototypes[c] - state.feature_mean
            out[c] = float(e @ p) / max(np.linalg.norm(p) * np.linalg.norm(e), 1e-12)
    return out


def _bootstrap_assign(state: SelectionState, boxes, embs) -> list:
    """Largest box (ties: nearest the frame centre) is the child; the rest go
    to the most similar non-child class, opening an unused class when every
    used one is dissimilar."""
    def key(i):
        b = boxes[i]
        d = 0.0
        if state.center is not None:
            cx, cy = b.center
            d = (cx - state.center[0]) ** 2 + (cy - state.center[1]) ** 2
        return (-b.area, d, i)

    order = sorted(range(len(boxes)), key=key)
    assign = [CHILD_CLASS] * len(boxes)
    if state.classes == 1:
        return assign
    counts = state.counts.copy()
    for i in order[1:]:
        sims = _cosine_scores(replace(state, counts=counts), embs[i])
        sims[CHILD_CLASS] = -np.inf
        free = [c for c in range(1, state.classes) if counts[c] == 0]
        if free and (not np.isfinite(sims).any() or sims.max() < 0.5):
            c = free[0]
        else:
            c = int(np.argmax(sims))
        assign[i] = c
        counts[c] += 1
    return assign


def _joint_assign(scores: np.ndarray) -> list:
    """Class per detection.

    Faces in one frame belong to different people, so when there are no more
    detections than classes the assignment is the injective one with the
    highest total score. Otherwise each detection takes its best class.
    """
    n, k = scores.shape
    if n > k or n == 1 or k == 1:
        return [int(np.argmax(r)) for r in scores]
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(k), n):
        vals = scores[np.arange(n), perm]
        if not np.all(np.isfinite(vals)):
            continue
        v = float(vals.sum())
        if v > best_val:
            best, best_val = list(perm), v
    if best is None:
        return [int(np.argmax(r)) for r in scores]
    return best


def select_step(state: SelectionState, detections, embed=None):
    """Assign every detection of one frame to a face class and update the model.

    ``detections`` is a list of ``(DetectionBox, FacePatch)``. Returns
    ``(child box or None, new state)``. At most one box is reported as the
    child: the one with the highest child-class score among those assigned
    to the child class.
    """
    if not detections:
        return None, state
    embed = embed or HistogramEmbedding()
    boxes = [d[0] for d in detections]
    embs = [embed(d[1]) for d in detections]
    seen = state.seen + len(embs)
    mean = state.feature_mean + (np.sum(embs, axis=0) - len(embs) * state.feature_mean) / seen
    state = replace(state, feature_mean=mean, seen=seen)

    if state.frames_seen < state.bootstrap_frames:
        assign = _bootstrap_assign(state, boxes, embs)
        child_scores = [1.0 if a == CHILD_CLASS else 0.0 for a in assign]
    else:
        use_model = state.model.updates >= state.warmup_updates
        if use_model:
            scores = np.array([np.log(np.maximum(state.model.proba(state.features(e)), 1e-300)) for e in embs])
        else:
            scores = np.array([_cosine_scores(state, e) for e in embs])
        assign = _joint_assign(scores)
        child_scores = [float(v) for v in scores[:, CHILD_CLASS]]

    model = state.model
    protos = state.prototypes.copy()
    counts = state.counts.copy()
    for e, c in zip(embs, assign):
        model = online_update(model, state.features(e), c)
        counts[c] += 1
        protos[c] += (e - protos[c]) / counts[c]

    child = [i for i, c in enumerate(assign) if c == CHILD_CLASS]
    pick = boxes[max(child, key=lambda i: (child_scores[i], -i))] if child else None
    new_state = replace(state, model=model, prototypes=protos, counts=counts, frames_seen=state.frames_seen + 1)
    return pick, new_state


def run_selection(stream, classes: int = 2, embed=None, **kw):
    """Run :func:`select_step` over a list of frames; returns (picks, final state)."""
    embed = embed or HistogramEmbedding()
    state = SelectionState.create(classes, embed.dim, **kw)
    picks = []
    for dets in stream:
        pick, state = select_step(state, dets, embed)
        picks.append(pick)
    return picks, state
