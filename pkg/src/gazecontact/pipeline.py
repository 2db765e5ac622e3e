"""Glue between manifests on disk and the four detectors: loading frames,
extracting per-method inputs, training, scoring and the training-size sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import (
    HOG_DIM, PIXEL_DIM, eye_patches, eye_pixels, predict_gazelock, predict_peec, train_gazelock, train_peec,
)
from .config import RunConfig
from .errors import DegenerateInput, OutOfBounds
from .evaluation.metrics import sweep_thresholds
from .evaluation.rebalance import rebalance
from .imaging import FacePatch, eye_pair_hog, read_netpbm, resize_array
from .manifest import read_manifest, resolve_image
from .numerics import Rng
from .picnn.model import PicnnModel
from .picnn.train import TrainData, train

METHODS = ("picnn", "alexnet", "peec", "gazelock")


@dataclass
class FrameTable:
    """Manifest rows with their decoded RGB images stacked as u8 (N, H, W, 3)."""

    rows: list
    images: np.ndarray

    def __len__(self):
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=np.int64)

    @property
    def session_ids(self) -> np.ndarray:
        return np.array([r.session_id for r in self.rows])

    def subset(self, mask_or_idx) -> "FrameTable":
        idx = np.flatnonzero(mask_or_idx) if np.asarray(mask_or_idx).dtype == bool else np.asarray(mask_or_idx)
        return FrameTable([self.rows[i] for i in idx], self.images[idx])

    def sessions(self, ids) -> "FrameTable":
        keep = set(ids)
        return self.subset(np.array([r.session_id in keep for r in self.rows], dtype=bool))


def _as_rgb(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def load_table(manifest_path, size: int | None = None) -> FrameTable:
    """Read a manifest and every referenced image; images are resized to
    ``size`` square when they differ from it (all must share one size otherwise)."""
    rows = read_manifest(manifest_path)
    if not rows:
        raise DegenerateInput(f"{manifest_path}: manifest has no frames")
    imgs = []
    for r in rows:
        img = _as_rgb(read_netpbm(resolve_image(manifest_path, r)))
        if size is not None and img.shape[:2] != (size, size):
            img = np.clip(np.rint(resize_array(img.astype(np.float64), size, size)), 0, 255).astype(np.uint8)
        imgs.append(img)
    shapes = {i.shape for i in imgs}
    if len(shapes) != 1:
        raise DegenerateInput(f"{manifest_path}: images differ in size {sorted(shapes)}; pass a target size")
    return FrameTable(rows, np.stack(imgs))


# ---------------------------------------------------------------------------
# per-method inputs


def picnn_data(table: FrameTable, input_size: int) -> TrainData:
    imgs = table.images
    if imgs.shape[1:3] != (input_size, input_size):
        imgs = np.stack([np.clip(np.rint(resize_array(i.astype(np.float64), input_size, input_size)), 0, 255)
                         .astype(np.uint8) for i in imgs])
    pose = np.array([[r.yaw, r.pitch, r.roll if r.roll is not None else 0.0] if r.has_pose else [0.0, 0.0, 0.0]
                     for r in table.rows], dtype=np.float64) / 90.0
    mask = np.array([1.0 if r.has_pose else 0.0 for r in table.rows])
    return TrainData(imgs, table.labels, pose, mask)


@dataclass
class EyeFeatures:
    """Landmark-dependent inputs; rows where ``valid`` is False have no eyes."""

    valid: np.ndarray
    hog: np.ndarray
    pixels: np.ndarray
    poses: np.ndarray  # (N, 2) pitch, yaw; NaN when absent


def eye_features(table: FrameTable) -> EyeFeatures:
    """Align both eyes of every landmark-available frame and describe them.

    A frame counts as landmark-available only when the manifest says so and
    carries eye positions and a head pose; an eye crop that falls outside the
    padding limit is treated as a landmark failure as well.
    """
    n = len(table)
    valid = np.zeros(n, dtype=bool)
    hog = np.zeros((n, HOG_DIM))
    pix = np.zeros((n, PIXEL_DIM))
    poses = np.full((n, 2), np.nan)
    for i, r in enumerate(table.rows):
        if not (r.landmark_available and r.eyes is not None and r.has_pose):
            continue
        try:
            left, right = eye_patches(FacePatch(table.images[i]), r.eyes)
        except OutOfBounds:
            continue
        valid[i] = True
        hog[i] = eye_pair_hog(left, right)
        pix[i] = eye_pixels(left, right)
        poses[i] = (r.pitch, r.yaw)
    return EyeFeatures(valid, hog, pix, poses)


# ---------------------------------------------------------------------------
# train / score


def train_method(method: str, table: FrameTable, cfg: RunConfig, rng, feats: EyeFeatures | None = None,
                 callback=None):
    """Fit one detector; returns ``(model, training log or None)``."""
    if method not in METHODS:
        raise DegenerateInput(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    y = table.labels
    if y.min() == y.max():
        raise DegenerateInput("training frames must contain both classes")
    if method in ("picnn", "alexnet"):
        pc = cfg.picnn_config(pose_branch=(method == "picnn"))
        data = picnn_data(table, pc.input_size)
        plan = rebalance(y, cfg["train.target_fraction"], rng.substream(11)) if cfg["train.rebalance"] else None
        return train(data, pc, rng.substream(12), plan=plan, log_every=cfg["train.log_every"], callback=callback)
    feats = feats if feats is not None else eye_features(table)
    if not feats.valid.any():
        raise DegenerateInput(f"{method} needs frames with landmarks (eye positions and head pose); none found")
    v = feats.valid
    if method == "peec":
        poses = [tuple(p) if ok else None for p, ok in zip(feats.poses, v)]
        model = train_peec(feats.hog, poses, y, cfg["peec.k"], rng.substream(13),
                           cfg["peec.n_trees"], cfg["peec.candidates_per_node"])
        return model, None
    yaws = feats.poses[v, 1]
    model = train_gazelock(feats.pixels[v], y[v], yaws, rng.substream(14), cfg["gazelock.pca_dims"],
                           cfg["gazelock.mda_dims"], cfg["gazelock.C"])
    return model, None


def score_table(model, table: FrameTable, feats: EyeFeatures | None = None) -> np.ndarray:
    """Eye-contact probability per frame; NaN where a landmark-based model has no input."""
    if isinstance(model, PicnnModel):
        data = picnn_data(table, model.cfg.input_size)
        probs, _ = model.predict(data.images)
        return probs[:, 1].astype(np.float64)
    feats = feats if feats is not None else eye_features(table)
    out = np.full(len(table), math.nan)
    v = feats.valid
    if v.any():
        if hasattr(model, "gmm"):
            out[v] = predict_peec(model, feats.poses[v], feats.hog[v])
        else:
            out[v] = predict_gazelock(model, feats.pixels[v])
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# training-size sweep


@dataclass(frozen=True)
class SizePoint:
    sessions: int
    precision: float
    recall: float
    f1: float
    auc_pr: float


def training_size_sweep(method: str, train_table: FrameTable, test_table: FrameTable, counts, cfg: RunConfig,
                        rng=None) -> list:
    """Retrain on nested session subsets of growing size and score a fixed test set.

    Subsets are prefixes of one seeded session ordering, so every smaller
    training set is contained in the larger ones. Precision and recall are
    taken at the max-F1 threshold.
    """
    rng = rng if rng is not None else Rng(0)
    counts = [int(c) for c in counts]
    sessions = sorted(set(train_table.session_ids))
    if not counts or min(counts) < 1:
        raise DegenerateInput("session counts must be positive")
    if max(counts) > len(sessions):
        raise DegenerateInput(f"asked for {max(counts)} sessions but only {len(sessions)} are available")
    order = [sessions[i] for i in rng.substream(21).permutation(len(sessions))]
    test_feats = eye_features(test_table) if method in ("peec", "gazelock") else None
    out = []
    for c in counts:
        sub = train_table.sessions(order[:c])
        model, _ = train_method(method, sub, cfg, rng.substream(22))
        scores = score_table(model, test_table, test_feats)
        rep = sweep_thresholds(test_table.labels, scores)
        out.append(SizePoint(c, rep.precision_at_max_f1, rep.recall_at_max_f1, rep.max_f1, rep.auc_pr))
    return out


def size_curve_csv(points) -> str:
    lines = ["sessions,precision,recall,f1,auc_pr"]
    for p in points:
        lines.append(f"{p.sessions},{p.precision!r},{p.recall!r},{p.f1!r},{p.auc_pr!r}")
    return "\n".join(lines) + "\n"
