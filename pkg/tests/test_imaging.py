import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazecontact.errors import DegenerateInput, IoError, OutOfBounds
from gazecontact.imaging import (
    EYE_H, EYE_W, AugmentSpec, FacePatch, align_eyes, augment, cell_histograms, extract_hog, eye_pair_hog,
    hog_length, read_netpbm, resize_array, resize_patch, rotate_array, write_netpbm,
)


def smooth_image(w=60, h=50, seed=0):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / 10.0
    img = np.zeros((h, w, 3))
    for c in range(3):
        a, b, p = r.uniform(0.3, 1.0, 3)
        img[..., c] = 128 + 60 * np.sin(a * xx + p) * np.cos(b * yy)
    return img


def psnr(a, b):
    mse = np.mean((a - b) ** 2)
    return 10 * math.log10(255.0**2 / mse)


# --- patches and Netpbm -----------------------------------------------------

def test_facepatch_rejects_tiny():
    with pytest.raises(DegenerateInput):
        FacePatch(np.zeros((4, 4, 3), np.uint8))


def test_netpbm_roundtrip(tmp_path, nprng):
    rgb = nprng.integers(0, 256, (9, 13, 3)).astype(np.uint8)
    gray = nprng.integers(0, 256, (7, 5)).astype(np.uint8)
    write_netpbm(tmp_path / "a.ppm", rgb)
    write_netpbm(tmp_path / "b.pgm", gray)
    assert np.array_equal(read_netpbm(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_netpbm(tmp_path / "b.pgm")[:, :, 0], gray)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n13 9\n255\n") and len(raw) == len(b"P6\n13 9\n255\n") + 9 * 13 * 3


def test_netpbm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([7, 9]))
    assert read_netpbm(tmp_path / "c.pgm").ravel().tolist() == [7, 9]


def test_netpbm_errors(tmp_path):
    with pytest.raises(IoError):
        read_netpbm(tmp_path / "missing.ppm")
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(IoError):
        read_netpbm(tmp_path / "x.pgm")


# --- resize -----------------------------------------------------------------

def test_resize_to_network_input():
    p = FacePatch(np.full((198, 145, 3), 90, np.uint8))
    out = resize_patch(p, 227, 227)
    assert out.pixels.shape == (227, 227, 3)


def test_resize_same_size_is_identity(nprng):
    px = nprng.integers(0, 256, (227, 227, 3)).astype(np.uint8)
    assert np.array_equal(resize_patch(FacePatch(px), 227, 227).pixels, px)


def test_resize_constant_stays_constant():
    out = resize_patch(FacePatch(np.full((50, 50, 1), 137, np.uint8)), 227, 227)
    assert np.all(out.pixels == 137)


def test_resize_there_and_back_psnr():
    img = smooth_image()
    up = resize_array(img, 150, 130)
    back = resize_array(up, 60, 50)
    assert psnr(img, back) > 30


# --- rotation and eye alignment -------------------------------------------

def test_rotate_moves_content_counter_clockwise():
    img = np.zeros((21, 21, 1))
    img[10, 18] = 1.0  # right of centre
    out = rotate_array(img, 90.0)
    y, x = np.unravel_index(np.argmax(out[:, :, 0]), (21, 21))
    assert (y, x) == (2, 10)  # now above centre as displayed


def dots_image(eyes, size=96):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.full((size, size), 200.0)
    for ex, ey in eyes:
        img -= 180 * np.exp(-((xx - ex) ** 2 + (yy - ey) ** 2) / (2 * 2.0**2))
    return FacePatch(np.clip(img, 0, 255).astype(np.uint8))


def darkest(crop):
    from numpy import unravel_index

    y, x = unravel_index(np.argmin(crop), crop.shape)
    # sub-pixel refinement by intensity-weighted centroid around the minimum
    ys, xs = np.mgrid[max(0, y - 3):y + 4, max(0, x - 3):x + 4]
    wts = crop.max() - crop[ys, xs]
    return float((xs * wts).sum() / wts.sum()), float((ys * wts).sum() / wts.sum())


def test_align_eyes_level_eyes():
    patch = dots_image([(30, 40), (66, 40)])
    left, right = align_eyes(patch, (30, 40), (66, 40), 0.0)
    assert left.shape == (EYE_H, EYE_W) and right.shape == (EYE_H, EYE_W)
    for crop in (left, right):
        x, y = darkest(crop)
        assert abs(x - (EYE_W - 1) / 2) < 1 and abs(y - (EYE_H - 1) / 2) < 1


def test_align_eyes_undoes_roll():
    c, d = (48.0, 48.0), 18.0
    a = math.radians(30)
    le = (c[0] - d * math.cos(a), c[1] - d * math.sin(a))
    re = (c[0] + d * math.cos(a), c[1] + d * math.sin(a))
    ref = align_eyes(dots_image([(c[0] - d, 48), (c[0] + d, 48)]), (c[0] - d, 48), (c[0] + d, 48), 0.0)
    rolled = align_eyes(dots_image([le, re]), le, re, 30.0)
    for r0, r1 in zip(ref, rolled):
        p0, p1 = darkest(r0), darkest(r1)
        assert math.dist(p0, p1) < 1.0


def test_align_eyes_out_of_bounds():
    patch = FacePatch(np.full((64, 64, 3), 100, np.uint8))
    with pytest.raises(OutOfBounds):
        align_eyes(patch, (1, 1), (40, 1), 0.0)
    with pytest.raises(OutOfBounds):
        align_eyes(patch, (-5, 10), (20, 10), 0.0)


# --- HOG --------------------------------------------------------------------

def test_hog_lengths():
    assert hog_length() == (9 - 1) * (4 - 1) * 4 * 9 == 864
    eye = np.random.default_rng(0).uniform(0, 255, (EYE_H, EYE_W))
    assert extract_hog(eye).values.size == 864
    assert eye_pair_hog(eye, eye).size == 1728


def test_hog_constant_is_zero():
    assert not np.any(extract_hog(np.full((EYE_H, EYE_W), 77.0)).values)


def test_hog_vertical_edge_votes_horizontal_gradient_bin():
    img = np.zeros((EYE_H, EYE_W))
    img[:, 36:] = 100.0
    hist = cell_histograms(img)
    # the edge sits at columns 35/36, inside cell column 4
    edge_cell = hist[:, 4]
    assert np.all(edge_cell[:, 0] > 0)
    assert np.allclose(edge_cell[:, 1:], 0)
    others = np.delete(hist, 4, axis=1)
    assert not others.any()
    # brute force: each interior row contributes two pixels of magnitude 100
    assert np.allclose(edge_cell[:, 0], 8 * 2 * 100.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-60, 60), st.floats(0.2, 3.0), st.integers(0, 1000))
def test_hog_invariant_to_brightness_and_contrast(offset, gain, seed):
    eye = np.random.default_rng(seed).uniform(20, 200, (EYE_H, EYE_W))
    base = extract_hog(eye).values
    assert np.allclose(extract_hog(eye + offset).values, base, atol=1e-6)
    assert np.allclose(extract_hog(eye * gain).values, base, atol=1e-6)


# --- augmentation -----------------------------------------------------------

def test_identity_augment_is_exact(nprng):
    px = nprng.integers(0, 256, (20, 24, 3)).astype(np.uint8)
    assert np.array_equal(augment(FacePatch(px), AugmentSpec()).pixels, px)


def test_double_flip_is_identity(nprng):
    p = FacePatch(nprng.integers(0, 256, (20, 24, 3)).astype(np.uint8))
    spec = AugmentSpec(flip=True)
    assert np.array_equal(augment(augment(p, spec), spec).pixels, p.pixels)


def test_brightness_shift():
    p = FacePatch(np.full((16, 16, 3), 100, np.uint8))
    assert np.all(augment(p, AugmentSpec(brightness_delta=20.0)).pixels == 120)


def test_rotation_of_constant_stays_constant():
    p = FacePatch(np.full((16, 16, 3), 64, np.uint8))
    assert np.all(augment(p, AugmentSpec(rotation_deg=7.0)).pixels == 64)
