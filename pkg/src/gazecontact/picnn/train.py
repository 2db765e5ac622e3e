"""Minibatch SGD with momentum and weight decay for :class:`PicnnModel`."""

from __future__ import annotations

import io
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateInput, NumericFailure, ShapeMismatch
from ..imaging import FacePatch, augment
from ..numerics import Rng, atomic_write_text
from .model import PicnnConfig, PicnnModel, picnn_loss

LOG_HEADER = "iteration,lr,total_loss,ce_loss,pose_loss"


@dataclass
class TrainData:
    """Training set held as arrays.

    images: u8 (N, S, S, 3); labels: (N,) in {0, 1};
    pose_targets: (N, 3) yaw/pitch/roll divided by 90 (ignored where mask is 0);
    pose_mask: (N,) 1 where a pose target exists.
    """

    images: np.ndarray
    labels: np.ndarray
    pose_targets: np.ndarray
    pose_mask: np.ndarray

    def __post_init__(self):
        n = self.images.shape[0]
        self.labels = np.asarray(self.labels).astype(np.int64)
        self.pose_mask = np.asarray(self.pose_mask).astype(np.float64)
        self.pose_targets = np.nan_to_num(np.asarray(self.pose_targets, dtype=np.float64).reshape(n, 3))
        if self.labels.shape != (n,) or self.pose_mask.shape != (n,):
            raise ShapeMismatch("labels, pose targets and masks must match the image count")
        self.pose_targets[self.pose_mask == 0] = 0.0

    def __len__(self):
        return self.images.shape[0]


@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    total: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    pose: list = field(default_factory=list)

    def record(self, it, lr, total, ce, pose):
        self.iteration.append(it)
        self.lr.append(lr)
        self.total.append(total)
        self.ce.append(ce)
        self.pose.append(pose)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(LOG_HEADER + "\n")
        for row in zip(self.iteration, self.lr, self.total, self.ce, self.pose):
            buf.write("%d,%r,%r,%r,%r\n" % row)
        return buf.getvalue()


def write_train_log(path, log: TrainLog) -> None:
    atomic_write_text(path, log.to_csv())


def adjust_pose(target: np.ndarray, flip: bool, rotation_deg: float) -> np.ndarray:
    """Pose target (normalized yaw, pitch, roll) after flipping then rotating the patch.

    A mirror image negates yaw and roll; rotating the image counter-clockwise
    by ``rotation_deg`` lowers the roll by the same angle.
    """
    yaw, pitch, roll = target
    if flip:
        yaw, roll = -yaw, -roll
    return np.array([yaw, pitch, roll - rotation_deg / 90.0])


class _Batcher:
    """Yields minibatch index arrays (positions into the plan) from seeded
    per-epoch permutations."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch = batch_size
        self.rng = rng
        self.epoch = 0
        self.order = np.empty(0, dtype=np.intp)
        self.pos = 0

    def next(self):
        out = []
        need = self.batch
        while need:
            if self.pos >= self.order.size:
                self.order = self.rng.substream(self.epoch).permutation(self.n)
                self.epoch += 1
                self.pos = 0
            take = self.order[self.pos:self.pos + need]
            self.pos += take.size
            need -= take.size
            out.append(take)
        return np.concatenate(out)


def _materialize(data: TrainData, plan, positions):
    """Gather (images, labels, pose targets, masks) for plan entries, applying augmentation."""
    if plan is None:
        idx = positions
        return data.images[idx], data.labels[idx], data.pose_targets[idx], data.pose_mask[idx]
    idx = plan.index[positions]
    imgs = data.images[idx].copy()
    targets = data.pose_targets[idx].copy()
    for j in np.flatnonzero(plan.is_augmented()[positions]):
        spec = plan.spec(positions[j])
        imgs[j] = augment(FacePatch(imgs[j]), spec).pixels
        targets[j] = adjust_pose(targets[j], spec.flip, spec.rotation_deg)
    return imgs, plan.label[positions].astype(np.int64), targets, data.pose_mask[idx]


def train(data: TrainData, cfg: PicnnConfig | None = None, rng=None, plan=None,
          init_model: PicnnModel | None = None, log_every: int = 1, callback=None):
    """Train a network; returns ``(model, log)``.

    ``plan`` is an optional rebalancing plan (see ``evaluation.rebalance``);
    without it every sample is drawn uniformly. Minibatches come from
    per-epoch permutations of a dedicated substream, so a run is fully
    determined by ``rng``'s seed.
    """
    cfg = cfg or PicnnConfig()
    rng = rng if rng is not None else Rng(0)
    labels = plan.label if plan is not None else data.labels
    if len(labels) == 0 or labels.min() == labels.max():
        raise DegenerateInput("PiCNN training needs samples of both classes")
    s = cfg.input_size
    if data.images.shape[1:] != (s, s, 3):
        raise ShapeMismatch(f"training images must be {s}x{s}x3, got {data.images.shape[1:]}")

    model = init_model.copy() if init_model is not None else PicnnModel.init(cfg, rng.substream(1))
    velocity = {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in model.params.items()}
    batcher = _Batcher(len(labels), cfg.batch_size, rng.substream(2))
    log = TrainLog()
    lam = cfg.pose_loss_weight
    dt = np.dtype(cfg.dtype)
    # one mask stream per hidden fc layer, so the pose branch never shifts the eye-branch draws
    drop_layers = [n for n in ("fc6", "fc7e", "fc7p") if n in model.params] if cfg.dropout > 0 else []
    drop_rngs = {n: rng.substream(3).substream(zlib.crc32(n.encode())) for n in drop_layers}
    keep = 1.0 - cfg.dropout

    for it in range(1, cfg.iterations + 1):
        lr = cfg.lr_at(it)
        pos = batcher.next()
        imgs, y, tgt, mask = _materialize(data, plan, pos)
        x = model.preprocess(imgs)
        masks = {n: ((r.random((len(y), cfg.fc_width)) < keep) / keep).astype(dt) for n, r in drop_rngs.items()}
        logits, pose, cache = model.forward(x, keep_cache=True, dropout=masks or None)
        total, ce, pterm, dlogits, dpose = picnn_loss(logits, pose, y, tgt, mask, lam)
        if not np.isfinite(total):
            raise NumericFailure(f"loss became non-finite at iteration {it}")
        grads = model.backward(dlogits, dpose, cache)
        for name, (w, b) in model.params.items():
            gw, gb = grads[name]
            vw, vb = velocity[name]
            # weight decay applies to weights only, not biases
            vw *= cfg.momentum
            vw -= (lr * (gw + cfg.weight_decay * w)).astype(dt)
            vb *= cfg.momentum
            vb -= (lr * gb).astype(dt)
            w += vw
            b += vb
        if it % log_every == 0 or it == 1 or it == cfg.iterations:
            log.record(it, lr, total, ce, pterm)
        if callback is not None:
            callback(it, model)
    return model, log


def _activation_pattern(cache) -> tuple:
    """ReLU masks and pooling argmaxes of a cached forward pass; equal
    patterns mean the loss is smooth between two parameter settings."""
    caches, _, _, m6, (_, m7e, _), pcache = cache
    parts = []
    for _, relu_mask, pool in caches:
        parts.append(relu_mask)
        if pool is not None:
            parts.append(pool[1])
    parts += [m6, m7e]
    if pcache is not None:
        parts.append(pcache[1])
    return tuple(parts)


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def numeric_gradient_check(model: PicnnModel, x, labels, targets, mask, probes: int = 200,
                           step: float = 1e-5, rng=None, layers=None, max_draws: int = 20) -> dict:
    """Compare analytic gradients with central differences at random parameters.

    Returns ``{layer: (max relative error, probes used, kinks skipped)}`` where
    the relative error is ``|a - n| / max(|a| + |n|, 1e-8)``. A probe whose
    +/- step flips a ReLU or max-pool decision straddles a kink, where a
    central difference does not estimate the derivative; such probes are
    redrawn. Use a float64 model.
    """
    rng = rng if rng is not None else Rng(0)
    lam = model.cfg.pose_loss_weight

    def loss_and_pattern():
        lg, ps, c = model.forward(x, keep_cache=True)
        return picnn_loss(lg, ps, labels, targets, mask, lam)[0], _activation_pattern(c)

    lg, ps, cache = model.forward(x, keep_cache=True)
    _, _, _, dl, dp = picnn_loss(lg, ps, labels, targets, mask, lam)
    grads = model.backward(dl, dp, cache)
    base = _activation_pattern(cache)
    out = {}
    for name in layers or list(model.params):
        worst, used, kinks = 0.0, 0, 0
        for part in (0, 1):
            arr = model.params[name][part]
            g = grads[name][part]
            wanted = probes if part == 0 else max(1, probes // 10)
            done = 0
            for fi in rng.integers(0, arr.size, size=wanted * max_draws):
                if done == wanted:
                    break
                ix = np.unravel_index(int(fi), arr.shape)
                old = arr[ix]
                arr[ix] = old + step
                lp, pp = loss_and_pattern()
                arr[ix] = old - step
                lm, pm = loss_and_pattern()
                arr[ix] = old
                if not (_same_pattern(pp, base) and _same_pattern(pm, base)):
                    kinks += 1
                    continue
                num = (lp - lm) / (2 * step)
                ana = float(g[ix])
                worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-8))
                done += 1
            used += done
        out[name] = (worst, used, kinks)
    return out
