import math

import numpy as np
import pytest

from gazecontact import models
from gazecontact.errors import DegenerateInput, NumericFailure, ShapeMismatch
from gazecontact.numerics import Rng
from gazecontact.picnn import PicnnConfig, PicnnModel, TrainData, layer_shapes, picnn_loss, train
from gazecontact.picnn import layers as L
from gazecontact.picnn.train import adjust_pose, numeric_gradient_check
from gazecontact.picnn.viz import activation_grids, dump_filters_and_activations, filter_tiles
from gazecontact.imaging import read_netpbm, rotate_array

# a narrow network for the fast unit tests; the desk configuration is
# exercised by the acceptance suite
SMALL = PicnnConfig(input_size=48, channel_scale=0.125, fc_width=32, batch_size=8, iterations=50)


def toy_data(n=64, size=48, seed=0):
    """Bright patches are positives, dark patches negatives."""
    r = np.random.default_rng(seed)
    y = np.arange(n) % 2
    base = np.where(y[:, None, None, None] == 1, 170, 80)
    imgs = np.clip(base + r.normal(0, 25, (n, size, size, 3)), 0, 255).astype(np.uint8)
    pose = r.uniform(-0.5, 0.5, (n, 3))
    mask = (r.random(n) < 0.7).astype(float)
    return TrainData(imgs, y, pose, mask)


# --- forward ----------------------------------------------------------------

def test_forward_shapes_and_softmax():
    m = PicnnModel.init(SMALL, Rng(0))
    imgs = toy_data(5).images
    p, pose = m.predict(imgs)
    assert p.shape == (5, 2) and pose.shape == (5, 3)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_zero_model_gives_even_odds():
    m = PicnnModel.init(SMALL, zero=True)
    p, _ = m.predict(toy_data(4).images)
    assert np.all(p == 0.5)


def test_alexnet_variant_has_no_pose_head():
    m = PicnnModel.init(PicnnConfig(**{**SMALL.__dict__, "pose_branch": False}), Rng(0))
    p, pose = m.predict(toy_data(3).images)
    assert pose is None and "fc7p" not in m.params


def test_trunk_init_independent_of_pose_branch():
    a = PicnnModel.init(SMALL, Rng(3))
    b = PicnnModel.init(PicnnConfig(**{**SMALL.__dict__, "pose_branch": False}), Rng(3))
    for k in b.params:
        assert np.array_equal(a.params[k][0], b.params[k][0])


def test_wrong_input_size():
    m = PicnnModel.init(SMALL, Rng(0))
    with pytest.raises(ShapeMismatch):
        m.predict(np.zeros((2, 40, 40, 3), np.uint8))
    with pytest.raises(ShapeMismatch):
        PicnnConfig(input_size=30).feature_size()


def test_desk_and_full_shapes():
    desk = layer_shapes(PicnnConfig())
    assert desk["conv1"][0][0] == 24 and desk["fc8e"][0] == (2, 128) and desk["fc8p"][0] == (3, 128)
    full = layer_shapes(PicnnConfig.full())
    assert full["conv1"][0][0] == 96 and full["fc6"][0][0] == 4096


# --- loss -------------------------------------------------------------------

def test_loss_hand_value():
    logits = np.zeros((1, 2))
    pose = np.array([[0.1, 0.0, 0.0]])
    total, ce, pterm, _, _ = picnn_loss(logits, pose, [1], np.zeros((1, 3)), [1.0], 0.1)
    assert ce == pytest.approx(math.log(2))
    assert total == pytest.approx(math.log(2) + 0.1 * 0.01, abs=1e-12)


def test_loss_masks_zero_is_pure_ce():
    r = np.random.default_rng(0)
    logits, pose = r.normal(size=(6, 2)), r.normal(size=(6, 3))
    total, ce, pterm, _, dpose = picnn_loss(logits, pose, np.arange(6) % 2, r.normal(size=(6, 3)), np.zeros(6), 0.1)
    assert pterm == 0.0 and total == ce and not dpose.any()


def test_loss_perfect_prediction():
    logits = np.array([[-800.0, 800.0], [800.0, -800.0]])
    tgt = np.array([[0.1, 0.2, 0.3], [0.0, -0.1, 0.4]])
    total, *_ = picnn_loss(logits, tgt.copy(), [1, 0], tgt, [1.0, 1.0], 0.1)
    assert total == 0.0


def test_loss_lambda_zero_ignores_pose_targets():
    r = np.random.default_rng(1)
    logits, pose = r.normal(size=(5, 2)), r.normal(size=(5, 3))
    a = picnn_loss(logits, pose, np.arange(5) % 2, r.normal(size=(5, 3)), np.ones(5), 0.0)
    b = picnn_loss(logits, pose, np.arange(5) % 2, r.normal(size=(5, 3)), np.ones(5), 0.0)
    assert a[0] == b[0] and a[1] == b[1]
    assert np.array_equal(a[3], b[3]) and not a[4].any() and not b[4].any()


# --- layers -----------------------------------------------------------------

def test_maxpool_gradient_routes_to_argmax():
    r = np.random.default_rng(0)
    for _ in range(20):
        x = r.permutation(16).reshape(1, 4, 4, 1).astype(float)
        out, cache = L.maxpool_forward(x)
        dout = r.normal(size=out.shape)
        dx = L.maxpool_backward(dout, cache)
        expect = np.zeros_like(x)
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                win = x[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3, 0]
                a, b = np.unravel_index(np.argmax(win), win.shape)
                expect[0, 2 * i + a, 2 * j + b, 0] += dout[0, i, j, 0]
        assert np.array_equal(dx, expect)


def test_conv_matches_direct_loops():
    r = np.random.default_rng(2)
    x = r.normal(size=(2, 7, 7, 3))
    w = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=4)
    out, _ = L.conv_forward(x, w, b, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for n in range(2):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = xp[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
                for f in range(4):
                    ref[n, i, j, f] = np.sum(patch * np.transpose(w[f], (1, 2, 0))) + b[f]
    assert np.allclose(out, ref)


# --- gradients --------------------------------------------------------------

def small_batch(cfg, n=4):
    d = toy_data(n, cfg.input_size, seed=5)
    return d.images, d.labels, d.pose_targets, d.pose_mask


def test_gradient_check_small_network():
    cfg = PicnnConfig(**{**SMALL.__dict__, "dtype": "float64"})
    m = PicnnModel.init(cfg, Rng(1))
    imgs, y, tgt, mask = small_batch(cfg)
    res = numeric_gradient_check(m, m.preprocess(imgs), y, tgt, mask, probes=30, rng=Rng(2))
    for name, (err, used, _) in res.items():
        assert used > 0, name
        assert err < 1e-5, (name, err)


def test_zero_masks_zero_pose_gradients():
    m = PicnnModel.init(SMALL, Rng(0))
    imgs, y, tgt, _ = small_batch(SMALL)
    logits, pose, cache = m.forward(m.preprocess(imgs), keep_cache=True)
    _, _, _, dl, dp = picnn_loss(logits, pose, y, tgt, np.zeros(len(y)), 0.1)
    g = m.backward(dl, dp, cache)
    for name in ("fc7p", "fc8p"):
        assert not g[name][0].any() and not g[name][1].any()


def test_dropout_gradients_match_finite_differences():
    cfg = PicnnConfig(**{**SMALL.__dict__, "dtype": "float64"})
    m = PicnnModel.init(cfg, Rng(3))
    imgs, y, tgt, mask = small_batch(cfg)
    x = m.preprocess(imgs)
    r = np.random.default_rng(0)
    drop = {n: (r.random((len(y), cfg.fc_width)) < 0.5) * 2.0 for n in ("fc6", "fc7e", "fc7p")}

    def loss():
        lg, ps, _ = m.forward(x, dropout=drop)
        return picnn_loss(lg, ps, y, tgt, mask, 0.1)[0]

    lg, ps, cache = m.forward(x, keep_cache=True, dropout=drop)
    _, _, _, dl, dp = picnn_loss(lg, ps, y, tgt, mask, 0.1)
    g = m.backward(dl, dp, cache)
    for name in ("fc6", "fc7e", "fc7p", "fc8p"):
        w = m.params[name][0]
        for ix in zip(*np.unravel_index(r.integers(0, w.size, 5), w.shape)):
            old = w[ix]
            w[ix] = old + 1e-6
            lp = loss()
            w[ix] = old - 1e-6
            lm = loss()
            w[ix] = old
            assert (lp - lm) / 2e-6 == pytest.approx(g[name][0][ix], rel=1e-4, abs=1e-9)


def test_dropout_masks_of_ones_change_nothing():
    m = PicnnModel.init(SMALL, Rng(0))
    x = m.preprocess(toy_data(4).images)
    ones = {n: np.ones((4, SMALL.fc_width), np.float32) for n in ("fc6", "fc7e", "fc7p")}
    a, pa, _ = m.forward(x)
    b, pb, _ = m.forward(x, dropout=ones)
    assert np.array_equal(a, b) and np.array_equal(pa, pb)


def test_dropout_rate_changes_training():
    d = toy_data()
    a, _ = train(d, SMALL, Rng(1))
    b, _ = train(d, PicnnConfig(**{**SMALL.__dict__, "dropout": 0.5}), Rng(1))
    assert a.digest() != b.digest()


# --- training ---------------------------------------------------------------

def test_lr_schedule_full_size():
    cfg = PicnnConfig.full()
    assert cfg.lr_at(1) == 0.005
    assert cfg.lr_at(100000) == 0.005
    assert cfg.lr_at(100001) == 0.0005
    assert cfg.iterations == 200000 and cfg.batch_size == 128 and cfg.input_size == 227


def test_lr_schedule_scaled_for_desk():
    cfg = PicnnConfig(iterations=5000)
    assert cfg.schedule() == ((2500, 0.005), (5000, 0.0005))


def test_training_is_deterministic():
    d = toy_data()
    a, la = train(d, SMALL, Rng(4))
    b, lb = train(d, SMALL, Rng(4))
    assert a.digest() == b.digest()
    assert la.to_csv() == lb.to_csv()
    c, _ = train(d, SMALL, Rng(5))
    assert c.digest() != a.digest()


def test_lambda_zero_matches_branchless_network():
    d = toy_data()
    cfg0 = PicnnConfig(**{**SMALL.__dict__, "pose_loss_weight": 0.0, "iterations": 30})
    off = PicnnConfig(**{**cfg0.__dict__, "pose_branch": False})
    a, _ = train(d, cfg0, Rng(8))
    b, _ = train(d, off, Rng(8))
    la, _, _ = a.forward(a.preprocess(d.images))
    lb, _, _ = b.forward(b.preprocess(d.images))
    assert la.tobytes() == lb.tobytes()


def test_overfit_tiny_batch():
    d = toy_data(8)
    d = TrainData(d.images, d.labels, d.pose_targets, np.zeros(8))
    cfg = PicnnConfig(**{**SMALL.__dict__, "iterations": 600, "lr_schedule": ((600, 0.005),)})
    _, log = train(d, cfg, Rng(0))
    assert log.total[-1] < 0.01


def test_training_rejects_single_class():
    d = toy_data(8)
    with pytest.raises(DegenerateInput):
        train(TrainData(d.images, np.zeros(8), d.pose_targets, d.pose_mask), SMALL, Rng(0))


def test_training_diverges_loudly():
    cfg = PicnnConfig(**{**SMALL.__dict__, "iterations": 40, "lr_schedule": ((40, 1e8),)})
    with np.errstate(all="ignore"):
        with pytest.raises(NumericFailure):
            train(toy_data(), cfg, Rng(0))


def test_train_data_zeroes_unmasked_targets():
    d = TrainData(np.zeros((2, 8, 8, 3), np.uint8), [0, 1], [[0.5, 0.2, 0.1], [np.nan, 1, 1]], [1, 0])
    assert d.pose_targets[1].tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(ShapeMismatch):
        TrainData(np.zeros((2, 8, 8, 3), np.uint8), [0, 1, 1], np.zeros((2, 3)), [1, 0])


def test_model_roundtrip(tmp_path):
    m, _ = train(toy_data(), SMALL, Rng(1))
    models.save(tmp_path / "m.gcm", m)
    back = models.load(tmp_path / "m.gcm")
    assert back.digest() == m.digest()
    imgs = toy_data(3).images
    assert np.array_equal(back.predict(imgs)[0], m.predict(imgs)[0])


# --- augmentation pose bookkeeping ------------------------------------------

def eye_line_angle(img):
    flat = img[:, :, 0]
    ys, xs = np.mgrid[0:flat.shape[0], 0:flat.shape[1]]
    left = xs < flat.shape[1] / 2
    wl, wr = flat * left, flat * ~left
    lx, ly = (xs * wl).sum() / wl.sum(), (ys * wl).sum() / wl.sum()
    rx, ry = (xs * wr).sum() / wr.sum(), (ys * wr).sum() / wr.sum()
    return math.degrees(math.atan2(ry - ly, rx - lx))


@pytest.mark.parametrize("roll,rot", [(10.0, 6.0), (-12.0, 9.0), (0.0, -8.0)])
def test_rotation_updates_roll_target(roll, rot):
    size = 61
    c = (size - 1) / 2
    img = np.zeros((size, size, 1))
    a = math.radians(roll)
    yy, xx = np.mgrid[0:size, 0:size]
    for side in (-1, 1):
        ex, ey = c + side * 15 * math.cos(a), c + side * 15 * math.sin(a)
        img[..., 0] += np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / 4.0)
    assert eye_line_angle(img) == pytest.approx(roll, abs=0.5)
    rotated = eye_line_angle(rotate_array(img, rot))
    new = adjust_pose(np.array([0.0, 0.0, roll / 90.0]), False, rot)[2] * 90.0
    assert rotated == pytest.approx(new, abs=0.5)
    flipped = eye_line_angle(img[:, ::-1])
    assert flipped == pytest.approx(adjust_pose(np.array([0.2, 0.1, roll / 90]), True, 0.0)[2] * 90, abs=0.5)


def test_flip_negates_yaw():
    assert adjust_pose(np.array([0.3, 0.1, 0.05]), True, 0.0).tolist() == pytest.approx([-0.3, 0.1, -0.05])


# --- visualisation ----------------------------------------------------------

def test_filter_tile_counts():
    assert len(filter_tiles(PicnnModel.init(PicnnConfig(), Rng(0)))) == 24
    big = PicnnConfig.full()
    w_shape = layer_shapes(big)["conv1"][0]
    stub = PicnnModel(big, {"conv1": (np.random.default_rng(0).normal(size=w_shape), np.zeros(w_shape[0]))})
    assert len(filter_tiles(stub)) == 96


def test_constant_input_constant_first_layer_maps():
    m = PicnnModel.init(SMALL, Rng(0))
    maps = m.activations(np.full((1, 48, 48, 3), 140, np.uint8), upto=1)[0][0]
    for f in range(maps.shape[2]):
        assert np.ptp(maps[..., f]) == 0.0
    grid = activation_grids(m, np.full((48, 48, 3), 140, np.uint8), layers=1)[0]
    assert grid.dtype == np.uint8


def test_dump_writes_grids(tmp_path):
    m = PicnnModel.init(SMALL, Rng(0))
    paths = dump_filters_and_activations(m, toy_data(1).images[0], tmp_path)
    assert [p.rsplit("/", 1)[1] for p in paths] == [
        "conv1_filters.ppm", "conv1_activations.pgm", "conv2_activations.pgm", "conv3_activations.pgm"]
    assert read_netpbm(paths[0]).shape[2] == 3
