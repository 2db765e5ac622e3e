"""Gaussian mixture over (pitch, yaw) head pose, fitted by EM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput
from .numerics import Rng

COV_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmPoseModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 2) as (pitch, yaw)
    covariances: np.ndarray  # (k, 2, 2)
    log_likelihoods: tuple = field(default=(), compare=False)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def to_arrays(self):
        return [self.weights, self.means, self.covariances]

    @classmethod
    def from_arrays(cls, arrays):
        return cls(weights=arrays[0], means=arrays[1], covariances=arrays[2])


def pose_features(poses) -> np.ndarray:
    """Stack poses into an (n, 2) array of (pitch, yaw); roll is ignored."""
    rows = []
    for p in poses:
        if hasattr(p, "pitch"):
            rows.append((p.pitch, p.yaw))
        else:
            rows.append((p[0], p[1]))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def _floor_cov(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.maximum(w, COV_FLOOR)
    return (v * w) @ v.T


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    diff = np.linalg.solve(chol, (x - mean).T)
    maha = np.sum(diff**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + x.shape[1] * LOG_2PI)


def _log_joint(x: np.ndarray, model_w, means, covs) -> np.ndarray:
    cols = [np.log(model_w[c]) + _log_gauss(x, means[c], covs[c]) for c in range(len(model_w))]
    return np.stack(cols, axis=1)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def _kmeans_pp(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(0, n))]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random(), side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
    return np.array(centers)


def fit_gmm(poses, k: int = 3, rng=None, tol: float = 1e-6, max_iter: int = 200) -> GmmPoseModel:
    """EM with k-means++ initialization and full covariances.

    Stops when the relative log-likelihood improvement drops below ``tol`` or
    after ``max_iter`` iterations. Covariance eigenvalues are floored at 1e-6
    in every M-step.
    """
    x = pose_features(poses)
    if k < 1:
        raise DegenerateInput("k must be positive")
    n = x.shape[0]
    if n < 2 * k or np.unique(x, axis=0).shape[0] < 2 * k:
        raise DegenerateInput(f"need at least {2 * k} distinct poses for k={k}")
    rng = rng if rng is not None else Rng(0)

    centers = _kmeans_pp(x, k, rng)
    d2 = np.stack([np.sum((x - c) ** 2, axis=1) for c in centers], axis=1)
    assign = np.argmin(d2, axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), assign] = 1.0

    history = []
    weights = means = covs = None
    for _ in range(max_iter):
        # M-step
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((k, 2, 2))
        for c in range(k):
            dev = x - means[c]
            covs[c] = _floor_cov((resp[:, c, None] * dev).T @ dev / nk[c])
        # E-step
        lj = _log_joint(x, weights, means, covs)
        lse = _logsumexp(lj)
        resp = np.exp(lj - lse[:, None])
        ll = float(lse.sum())
        if history and abs(ll - history[-1]) <= tol * abs(history[-1]):
            history.append(ll)
            break
        history.append(ll)
    return GmmPoseModel(weights=weights / weights.sum(), means=means, covariances=covs,
                        log_likelihoods=tuple(history))


def responsibilities(model: GmmPoseModel, pose) -> np.ndarray:
    """Posterior P(cluster | pose) for a single pose."""
    return responsibilities_batch(model, [pose])[0]


def responsibilities_batch(model: GmmPoseModel, poses) -> np.ndarray:
    x = pose_features(poses)
    lj = _log_joint(x, model.weights, model.means, model.covariances)
    r = np.exp(lj - _logsumexp(lj)[:, None])
    return r / r.sum(axis=1, keepdims=True)


def log_likelihood(model: GmmPoseModel, poses) -> float:
    x = pose_features(poses)
    return float(_logsumexp(_log_joint(x, model.weights, model.means, model.covariances)).sum())
