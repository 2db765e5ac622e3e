"""Pose-implicit CNN: shared conv trunk + fc6, then an eye-contact branch
(fc7e, fc8e -> 2 logits) and a head-pose branch (fc7p, fc8p -> yaw, pitch, roll).

With ``pose_branch=False`` the same network is the modified-AlexNet baseline.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..numerics import Rng, encode_container
from . import layers as L

ALEXNET_CHANNELS = (96, 256, 384, 384, 256)
# (kernel, stride, pad, pool after)
CONV_SPECS = ((7, 2, 0, True), (5, 1, 2, True), (3, 1, 1, False), (3, 1, 1, False), (3, 1, 1, True))
TRUNK = ("conv1", "conv2", "conv3", "conv4", "conv5", "fc6")
EYE_BRANCH = ("fc7e", "fc8e")
POSE_BRANCH = ("fc7p", "fc8p")
FULL_SCHEDULE = ((100000, 0.005), (200000, 0.0005))


@dataclass(frozen=True)
class PicnnConfig:
    input_size: int = 64
    channel_scale: float = 0.25
    fc_width: int = 128
    pose_branch: bool = True
    pose_loss_weight: float = 0.1
    batch_size: int = 32
    iterations: int = 5000
    lr_schedule: tuple = ()
    momentum: float = 0.9
    weight_decay: float = 5e-4
    init: str = "he"
    init_std: float = 0.01
    dropout: float = 0.0
    dtype: str = "float32"

    @classmethod
    def full(cls, **kw):
        base = dict(input_size=227, channel_scale=1.0, fc_width=4096, batch_size=128,
                    iterations=200000, lr_schedule=FULL_SCHEDULE)
        base.update(kw)
        return cls(**base)

    @property
    def channels(self) -> tuple:
        return tuple(max(1, int(round(c * self.channel_scale))) for c in ALEXNET_CHANNELS)

    def schedule(self) -> tuple:
        """Learning-rate breakpoints; desk runs scale the full-size ones proportionally."""
        if self.lr_schedule:
            return tuple(self.lr_schedule)
        total = FULL_SCHEDULE[-1][0]
        return tuple((max(1, round(until * self.iterations / total)), lr) for until, lr in FULL_SCHEDULE)

    def lr_at(self, iteration: int) -> float:
        """Learning rate for a 1-based iteration number."""
        sched = self.schedule()
        for until, lr in sched:
            if iteration <= until:
                return lr
        return sched[-1][1]

    def feature_size(self) -> int:
        s = self.input_size
        for k, st, p, pool in CONV_SPECS:
            s = L.conv_out(s, k, st, p)
            if pool:
                s = L.conv_out(s, 3, 2, 0)
        if s < 1:
            raise ShapeMismatch(f"input_size {self.input_size} too small for the conv stack")
        return s


def layer_shapes(cfg: PicnnConfig) -> dict:
    ch = cfg.channels
    shapes = {}
    cin = 3
    for i, ((k, _, _, _), cout) in enumerate(zip(CONV_SPECS, ch), start=1):
        shapes[f"conv{i}"] = ((cout, cin, k, k), (cout,))
        cin = cout
    flat = cfg.feature_size() ** 2 * ch[-1]
    fw = cfg.fc_width
    shapes["fc6"] = ((fw, flat), (fw,))
    shapes["fc7e"] = ((fw, fw), (fw,))
    shapes["fc8e"] = ((2, fw), (2,))
    if cfg.pose_branch:
        shapes["fc7p"] = ((fw, fw), (fw,))
        shapes["fc8p"] = ((3, fw), (3,))
    return shapes


class PicnnModel:
    """Parameters live in ``params[name] = (weight, bias)``."""

    def __init__(self, cfg: PicnnConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: PicnnConfig, rng=None, zero: bool = False) -> "PicnnModel":
        """Gaussian weights, zero biases.

        Each layer draws from its own substream, so trunk and eye-branch
        weights do not depend on whether the pose branch exists.
        """
        rng = rng if rng is not None else Rng(0)
        dt = np.dtype(cfg.dtype)
        params = {}
        for idx, (name, (ws, bs)) in enumerate(layer_shapes(cfg).items()):
            if zero:
                w = np.zeros(ws, dtype=dt)
            else:
                lrng = rng.substream(zlib.crc32(name.encode()))
                fan_in = int(np.prod(ws[1:]))
                std = cfg.init_std if cfg.init == "gaussian" else np.sqrt(2.0 / fan_in)
                w = (lrng.standard_normal(ws) * std).astype(dt)
            params[name] = (w, np.zeros(bs, dtype=dt))
        return cls(cfg, params)

    def copy(self) -> "PicnnModel":
        return PicnnModel(self.cfg, {k: (w.copy(), b.copy()) for k, (w, b) in self.params.items()})

    # ------------------------------------------------------------------

    def preprocess(self, images) -> np.ndarray:
        """u8 (N, H, W, 3) -> normalized float input."""
        x = np.asarray(images)
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (s, s, 3):
            raise ShapeMismatch(f"expected batch of {s}x{s}x3 patches, got {x.shape}")
        return ((x.astype(self.cfg.dtype) - 127.5) / 64.0).astype(self.cfg.dtype)

    def forward(self, x, keep_cache: bool = False, dropout: dict | None = None):
        """Returns (eye logits (N, 2), pose (N, 3) or None, cache).

        ``dropout`` maps hidden fc layer names (``fc6``, ``fc7e``, ``fc7p``) to
        scaled keep masks applied after their ReLU; training passes them,
        inference does not.
        """
        def drop(name, h, mask):
            if dropout is None or name not in dropout:
                return h, mask
            return h * dropout[name], mask * dropout[name]

        caches = []
        h = x
        for i, (k, st, pad, pool) in enumerate(CONV_SPECS, start=1):
            w, b = self.params[f"conv{i}"]
            h, c1 = L.conv_forward(h, w, b, st, pad)
            h, c2 = L.relu_forward(h)
            c3 = None
            if pool:
                h, c3 = L.maxpool_forward(h)
            caches.append((c1, c2, c3))
        flat_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        h, c_fc6 = L.fc_forward(h, *self.params["fc6"])
        h6, m6 = drop("fc6", *L.relu_forward(h))

        e, c7e = L.fc_forward(h6, *self.params["fc7e"])
        e, m7e = drop("fc7e", *L.relu_forward(e))
        logits, c8e = L.fc_forward(e, *self.params["fc8e"])

        pose = None
        pcache = None
        if self.cfg.pose_branch:
            p, c7p = L.fc_forward(h6, *self.params["fc7p"])
            p, m7p = drop("fc7p", *L.relu_forward(p))
            pose, c8p = L.fc_forward(p, *self.params["fc8p"])
            pcache = (c7p, m7p, c8p)
        cache = (caches, flat_shape, c_fc6, m6, (c7e, m7e, c8e), pcache) if keep_cache else None
        return logits, pose, cache

    def backward(self, dlogits, dpose, cache) -> dict:
        """Gradients for every parameter given output gradients."""
        caches, flat_shape, c_fc6, m6, (c7e, m7e, c8e), pcache = cache
        g = {}
        d, dw, db = L.fc_backward(dlogits, c8e, self.params["fc8e"][0])
        g["fc8e"] = (dw, db)
        d = L.relu_backward(d, m7e)
        dh6, dw, db = L.fc_backward(d, c7e, self.params["fc7e"][0])
        g["fc7e"] = (dw, db)
        if self.cfg.pose_branch:
            c7p, m7p, c8p = pcache
            d, dw, db = L.fc_backward(dpose, c8p, self.params["fc8p"][0])
            g["fc8p"] = (dw, db)
            d = L.relu_backward(d, m7p)
            dp6, dw, db = L.fc_backward(d, c7p, self.params["fc7p"][0])
            g["fc7p"] = (dw, db)
            dh6 = dh6 + dp6
        d = L.relu_backward(dh6, m6)
        d, dw, db = L.fc_backward(d, c_fc6, self.params["fc6"][0])
        g["fc6"] = (dw, db)
        d = d.reshape(flat_shape)
        for i in range(len(CONV_SPECS), 0, -1):
            c1, c2, c3 = caches[i - 1]
            if c3 is not None:
                d = L.maxpool_backward(d, c3)
            d = L.relu_backward(d, c2)
            d, dw, db = L.conv_backward(d, c1)
            g[f"conv{i}"] = (dw, db)
        return g

    def predict(self, images, batch: int = 256):
        """Eye-contact probabilities (N, 2) and pose outputs (N, 3) for u8 patches."""
        probs, poses = [], []
        images = np.asarray(images)
        for s in range(0, images.shape[0], batch):
            logits, pose, _ = self.forward(self.preprocess(images[s:s + batch]))
            probs.append(L.softmax(logits.astype(np.float64)))
            if pose is not None:
                poses.append(pose.astype(np.float64))
        p = np.concatenate(probs) if probs else np.zeros((0, 2))
        q = np.concatenate(poses) if poses else None
        return p, q

    def activations(self, images, upto: int = 3) -> list:
        """Post-ReLU feature maps of conv1..conv``upto`` (before pooling)."""
        h = self.preprocess(images)
        maps = []
        for i, (k, st, pad, pool) in enumerate(CONV_SPECS[:upto], start=1):
            w, b = self.params[f"conv{i}"]
            h, _ = L.conv_forward(h, w, b, st, pad)
            h, _ = L.relu_forward(h)
            maps.append(h)
            if pool:
                h, _ = L.maxpool_forward(h)
        return maps

    # ------------------------------------------------------------------

    def to_arrays(self):
        c = self.cfg
        meta = np.array([c.input_size, c.channel_scale, c.fc_width, float(c.pose_branch),
                         c.pose_loss_weight, 1.0 if c.dtype == "float64" else 0.0])
        out = [meta]
        for name in layer_shapes(c):
            w, b = self.params[name]
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays, **overrides):
        meta = arrays[0]
        cfg = PicnnConfig(input_size=int(meta[0]), channel_scale=float(meta[1]), fc_width=int(meta[2]),
                          pose_branch=bool(meta[3]), pose_loss_weight=float(meta[4]),
                          dtype="float64" if meta[5] else "float32", **overrides)
        params = {}
        for i, name in enumerate(layer_shapes(cfg)):
            params[name] = (arrays[1 + 2 * i].astype(cfg.dtype), arrays[2 + 2 * i].astype(cfg.dtype))
        return cls(cfg, params)

    def digest(self) -> str:
        from ..models import PICNN_KIND

        return hashlib.sha256(encode_container(PICNN_KIND, self.to_arrays())).hexdigest()


def picnn_loss(logits, pose, labels, pose_targets, pose_mask, lam):
    """Mean cross-entropy plus ``lam`` times the masked mean squared pose error.

    Returns (total, ce, pose_term, dlogits, dpose).
    """
    labels = np.asarray(labels).astype(np.intp)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    ce = -np.mean(logp[np.arange(n), labels])
    p = np.exp(logp)
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    if pose is None:
        return float(ce), float(ce), 0.0, dlogits.astype(logits.dtype), None
    mask = np.asarray(pose_mask, dtype=pose.dtype)[:, None]
    denom = max(1.0, float(mask.sum()))
    diff = (pose - np.asarray(pose_targets, dtype=pose.dtype)) * mask
    pose_term = float(np.sum(diff**2) / denom)
    dpose = (lam * 2.0 / denom) * diff
    total = float(ce) + lam * pose_term
    return total, float(ce), pose_term, dlogits.astype(logits.dtype), dpose.astype(pose.dtype)
