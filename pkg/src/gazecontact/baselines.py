"""Landmark-dependent detectors: PEEC (pose clusters + per-cluster forests on
eye HOG) and GazeLocking (eye pixels -> PCA -> MDA -> linear SVM).

Frames without landmarks get no prediction; the marker is ``NaN``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .classifiers import ForestModel, LinearSvmModel, fit_forest, fit_linear_svm, predict_forest
from .errors import DegenerateInput, DimensionMismatch
from .imaging import EYE_H, EYE_W, align_eyes, eye_pair_hog, hog_length
from .numerics import MdaModel, PcaModel, Rng, fit_mda, fit_pca
from .posecluster import GmmPoseModel, fit_gmm, responsibilities_batch

NO_PREDICTION = float("nan")
HOG_DIM = 2 * hog_length()
PIXEL_DIM = 2 * EYE_W * EYE_H


def eye_roll(eyes) -> float:
    lx, ly, rx, ry = eyes
    return math.degrees(math.atan2(ry - ly, rx - lx))


def eye_patches(patch, eyes, roll=None):
    """Aligned (left, right) 73x37 grayscale crops for one frame."""
    lx, ly, rx, ry = eyes
    if roll is None:
        roll = eye_roll(eyes)
    return align_eyes(patch, (lx, ly), (rx, ry), roll)


# ---------------------------------------------------------------------------
# PEEC


@dataclass(frozen=True)
class PeecModel:
    gmm: GmmPoseModel
    forests: tuple
    n_excluded: int = field(default=0, compare=False)

    @property
    def k(self) -> int:
        return self.gmm.k

    def to_arrays(self):
        out = [np.array([self.k])] + self.gmm.to_arrays()
        for f in self.forests:
            out += f.to_arrays()
        return out

    @classmethod
    def from_arrays(cls, arrays):
        k = int(arrays[0][0])
        gmm = GmmPoseModel.from_arrays(arrays[1:4])
        forests = tuple(ForestModel.from_arrays(arrays[4 + 7 * i: 11 + 7 * i]) for i in range(k))
        return cls(gmm, forests)


def train_peec(hog_features, poses, labels, k: int = 3, rng=None, n_trees: int = 100,
               candidates_per_node: int = 10) -> PeecModel:
    """Fit the pose GMM on (pitch, yaw) and one forest per hard-assigned cluster.

    ``poses`` rows are (pitch, yaw) pairs or ``None``; frames without a pose
    are excluded and counted in ``n_excluded``.
    """
    rng = rng if rng is not None else Rng(0)
    keep = [i for i, p in enumerate(poses) if p is not None and not np.any(np.isnan(p))]
    excluded = len(poses) - len(keep)
    if not keep:
        raise DegenerateInput("PEEC training needs frames with head pose; none have one")
    x = np.asarray(hog_features, dtype=np.float64)[keep]
    y = np.asarray(labels)[keep].astype(int)
    pose_arr = np.asarray([poses[i] for i in keep], dtype=np.float64)
    gmm = fit_gmm(pose_arr, k, rng.substream(1))
    assign = np.argmax(responsibilities_batch(gmm, pose_arr), axis=1)
    forests = []
    for c in range(k):
        m = assign == c
        yc = y[m]
        if yc.size == 0 or yc.min() == yc.max():
            raise DegenerateInput(f"pose cluster {c} lacks one of the two classes")
        forests.append(fit_forest(x[m], yc, rng.substream(100 + c), n_trees, candidates_per_node))
    return PeecModel(gmm, tuple(forests), excluded)


def predict_peec(model: PeecModel, poses, hog_features) -> np.ndarray:
    """Mixture of per-cluster forest probabilities weighted by responsibilities."""
    x = np.atleast_2d(np.asarray(hog_features, dtype=np.float64))
    p = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    if x.shape[1] != model.forests[0].n_features:
        raise DimensionMismatch(f"expected {model.forests[0].n_features} HOG values, got {x.shape[1]}")
    resp = responsibilities_batch(model.gmm, p)
    per_cluster = np.stack([predict_forest(f, x) for f in model.forests], axis=1)
    return mixture_probability(resp, per_cluster)


def mixture_probability(resp: np.ndarray, cluster_probs: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(resp) * np.asarray(cluster_probs), axis=-1)


# ---------------------------------------------------------------------------
# GazeLocking


@dataclass(frozen=True)
class GazeLockModel:
    pca: PcaModel
    mda: MdaModel
    svm: LinearSvmModel

    def to_arrays(self):
        return [
            self.pca.mean, self.pca.components, self.pca.explained_variance,
            self.mda.projection, self.mda.class_means, self.mda.classes.astype(np.float64),
            *self.svm.to_arrays(),
        ]

    @classmethod
    def from_arrays(cls, a):
        return cls(PcaModel(a[0], a[1], a[2]), MdaModel(a[3], a[4], a[5]),
                   LinearSvmModel.from_arrays(a[6:8]))

    def embed(self, pixels: np.ndarray) -> np.ndarray:
        return self.mda.transform(self.pca.transform(pixels))


def eye_pixels(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ravel(left), np.ravel(right)]) / 255.0


def pose_buckets(yaws: np.ndarray, n_buckets: int = 3) -> np.ndarray:
    """Yaw quantile buckets used to form composite MDA classes."""
    edges = np.quantile(yaws, np.linspace(0, 1, n_buckets + 1)[1:-1])
    return np.searchsorted(edges, yaws, side="right")


def train_gazelock(pixels, labels, yaws=None, rng=None, pca_dims: int = 200, mda_dims: int = 6,
                   C: float = 1.0) -> GazeLockModel:
    """PCA to ``pca_dims``, MDA on (label x yaw bucket) classes, SVM on the label."""
    rng = rng if rng is not None else Rng(0)
    x = np.asarray(pixels, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if y.min() == y.max():
        raise DegenerateInput("GazeLocking training needs both classes")
    dims = min(pca_dims, x.shape[0] - 1, x.shape[1])
    pca = fit_pca(x, dims)
    z = pca.transform(x)
    if yaws is not None:
        classes = y * 3 + pose_buckets(np.asarray(yaws, dtype=np.float64))
        for label in (0, 1):
            # fold composite classes too small for a scatter estimate into the label's largest one
            ids, counts = np.unique(classes[y == label], return_counts=True)
            for c in ids[counts < 2]:
                classes[classes == c] = ids[np.argmax(counts)]
    else:
        classes = y
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mda = fit_mda(z, classes, min(mda_dims, np.unique(classes).size - 1))
    feats = mda.transform(z)
    svm = fit_linear_svm(feats, y, C, rng.substream(7))
    return GazeLockModel(pca, mda, svm)


def predict_gazelock(model: GazeLockModel, pixels) -> np.ndarray:
    x = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    if x.shape[1] != model.pca.mean.size:
        raise DimensionMismatch(f"expected {model.pca.mean.size} pixels, got {x.shape[1]}")
    score = model.svm.decision(model.embed(x))
    return 1.0 / (1.0 + np.exp(-score))
