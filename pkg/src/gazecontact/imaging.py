"""Face and eye patch handling: Netpbm I/O, resampling, eye alignment,
augmentation and HOG descriptors."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, IoError, OutOfBounds
from .numerics import atomic_write_bytes

EYE_W = 73
EYE_H = 37
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FacePatch:
    """u8 image, shape (height, width, channels) with 1 or 3 channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise DegenerateInput(f"bad patch shape {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise DegenerateInput(f"patch {px.shape[1]}x{px.shape[0]} smaller than 8x8")
        if px.dtype != np.uint8:
            px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Float grayscale image (ITU-R 601 luma)."""
        px = self.pixels.astype(np.float64)
        if self.channels == 1:
            return px[:, :, 0]
        return px @ LUMA


# ---------------------------------------------------------------------------
# Netpbm


def write_netpbm(path, image: np.ndarray) -> None:
    """Write a u8 image as binary PGM (P5) or PPM (P6)."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise DegenerateInput(f"cannot encode image of shape {img.shape}")
    h, w = img.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    atomic_write_bytes(path, header + np.ascontiguousarray(img).tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_netpbm(path) -> np.ndarray:
    """Read a binary PGM/PPM; returns (H, W, C) u8."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise IoError(f"{path}: malformed Netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    pos += 1  # single whitespace byte before the raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise IoError(f"{path}: only 8-bit P5/P6 supported")
    c = 1 if magic == b"P5" else 3
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=pos)
    return raster.reshape(h, w, c).copy()


def load_patch(path) -> FacePatch:
    return FacePatch(read_netpbm(path))


def save_patch(path, patch: FacePatch) -> None:
    write_netpbm(path, patch.pixels)


# ---------------------------------------------------------------------------
# resampling


def _reflect(coord: np.ndarray, size: int) -> np.ndarray:
    # mirror about the outer pixel edges (-0.5 and size - 0.5)
    period = 2 * size
    c = np.mod(coord + 0.5, period)
    c = np.where(c >= size, period - c, c)
    return c - 0.5


def sample_bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray, reflect: bool = True):
    """Bilinear lookup at float coordinates; image is (H, W, C) float."""
    h, w = image.shape[:2]
    if reflect:
        xs = _reflect(xs, w)
        ys = _reflect(ys, h)
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_array(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize of a float (H, W, C) array using pixel-centre alignment."""
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise DegenerateInput("cannot resize a zero-area image")
    if (w, h) == (out_w, out_h):
        return image.copy()
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return sample_bilinear(image, gx, gy, reflect=False)


def resize_patch(patch: FacePatch, out_w: int, out_h: int) -> FacePatch:
    if out_w < 8 or out_h < 8:
        raise DegenerateInput("output size must be at least 8x8")
    out = resize_array(patch.pixels.astype(np.float64), out_w, out_h)
    return FacePatch(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def rotate_array(image: np.ndarray, angle_deg: float, center=None) -> np.ndarray:
    """Rotate counter-clockwise (as displayed, y pointing down) about ``center``
    with reflective padding."""
    h, w = image.shape[:2]
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    cx, cy = center
    a = math.radians(angle_deg)
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx, dy = gx - cx, gy - cy
    # inverse map: destination -> source
    sx = cx + math.cos(a) * dx - math.sin(a) * dy
    sy = cy + math.sin(a) * dx + math.cos(a) * dy
    return sample_bilinear(image, sx, sy, reflect=True)


# ---------------------------------------------------------------------------
# eye alignment


def align_eyes(
    patch: FacePatch,
    left_eye,
    right_eye,
    roll_deg: float,
    crop_scale: float = 1.1,
    pad_limit: float = 0.25,
):
    """Undo head roll about the eye midpoint and crop one 73x37 patch per eye.

    Each crop spans ``crop_scale`` times the inter-eye distance horizontally,
    so with the default of 1.1 the two crops side by side cover 2.2 times
    the inter-eye distance.
    ``roll_deg`` is the angle of the left->right eye line in image coordinates
    (y down). Returns two float grayscale arrays of shape (37, 73).
    """
    gray = patch.gray()[:, :, None]
    h, w = gray.shape[:2]
    lx, ly = map(float, left_eye)
    rx, ry = map(float, right_eye)
    for x, y in ((lx, ly), (rx, ry)):
        if not (0 <= x < w and 0 <= y < h):
            raise OutOfBounds(f"eye point ({x:.1f}, {y:.1f}) outside {w}x{h} patch")
    mx, my = (lx + rx) / 2.0, (ly + ry) / 2.0
    dist = math.hypot(rx - lx, ry - ly)
    if dist <= 0:
        raise DegenerateInput("eye points coincide")
    crop_w = crop_scale * dist
    crop_h = crop_w * EYE_H / EYE_W
    a = math.radians(roll_deg)
    ca, sa = math.cos(a), math.sin(a)
    u = (np.arange(EYE_W) + 0.5) / EYE_W - 0.5
    v = (np.arange(EYE_H) + 0.5) / EYE_H - 0.5
    gu, gv = np.meshgrid(u * crop_w, v * crop_h)
    limit_x = pad_limit * w
    limit_y = pad_limit * h
    crops = []
    for side in (-0.5, 0.5):
        # crop coordinates in the de-rolled frame, relative to the midpoint
        px = side * dist + gu
        py = gv
        sx = mx + ca * px - sa * py
        sy = my + sa * px + ca * py
        if (
            sx.min() < -limit_x
            or sx.max() > w - 1 + limit_x
            or sy.min() < -limit_y
            or sy.max() > h - 1 + limit_y
        ):
            raise OutOfBounds("eye crop exceeds the reflective padding limit")
        crops.append(sample_bilinear(gray, sx, sy, reflect=True)[:, :, 0])
    return crops[0], crops[1]


# ---------------------------------------------------------------------------
# HOG

HOG_CELL = 8
HOG_BINS = 9
HOG_BLOCK = 2
HOG_CLIP = 0.2


@dataclass(frozen=True)
class HogFeature:
    values: np.ndarray
    cells_x: int
    cells_y: int
    bins: int = HOG_BINS


def hog_length(width: int = EYE_W, height: int = EYE_H) -> int:
    cx, cy = width // HOG_CELL, height // HOG_CELL
    return (cx - HOG_BLOCK + 1) * (cy - HOG_BLOCK + 1) * HOG_BLOCK * HOG_BLOCK * HOG_BINS


def _l2hys(block: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(block**2, axis=-1, keepdims=True))
    safe = np.where(norm > 1e-12, norm, 1.0)
    out = np.where(norm > 1e-12, block / safe, 0.0)
    out = np.minimum(out, HOG_CLIP)
    norm = np.sqrt(np.sum(out**2, axis=-1, keepdims=True))
    safe = np.where(norm > 1e-12, norm, 1.0)
    return np.where(norm > 1e-12, out / safe, 0.0)


def cell_histograms(image: np.ndarray) -> np.ndarray:
    """Unsigned orientation histograms, shape (cells_y, cells_x, bins).

    Gradients are centred differences with zero gradient on the border rows
    and columns; each pixel votes its magnitude into one 20-degree bin.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = img[:, 2:] - img[:, :-2]
    gy[1:-1, :] = img[2:, :] - img[:-2, :]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    bins = np.minimum((ang / (180.0 / HOG_BINS)).astype(np.intp), HOG_BINS - 1)
    cy, cx = h // HOG_CELL, w // HOG_CELL
    mag = mag[: cy * HOG_CELL, : cx * HOG_CELL]
    bins = bins[: cy * HOG_CELL, : cx * HOG_CELL]
    onehot = np.zeros(mag.shape + (HOG_BINS,))
    np.put_along_axis(onehot, bins[..., None], mag[..., None], axis=-1)
    return onehot.reshape(cy, HOG_CELL, cx, HOG_CELL, HOG_BINS).sum(axis=(1, 3))


def extract_hog(eye: np.ndarray) -> HogFeature:
    """Dalal-Triggs descriptor: 8x8 cells, 9 bins, 2x2 blocks at stride one, L2-hys."""
    eye = np.asarray(eye, dtype=np.float64)
    if eye.ndim == 3:
        eye = eye[:, :, 0] if eye.shape[2] == 1 else eye @ LUMA
    hist = cell_histograms(eye)
    cy, cx, _ = hist.shape
    by, bx = cy - HOG_BLOCK + 1, cx - HOG_BLOCK + 1
    blocks = np.empty((by, bx, HOG_BLOCK, HOG_BLOCK, HOG_BINS))
    for i in range(HOG_BLOCK):
        for j in range(HOG_BLOCK):
            blocks[:, :, i, j] = hist[i : i + by, j : j + bx]
    flat = _l2hys(blocks.reshape(by, bx, -1))
    return HogFeature(values=flat.ravel(), cells_x=cx, cells_y=cy)


def eye_pair_hog(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.concatenate([extract_hog(left).values, extract_hog(right).values])


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    flip: bool = False
    rotation_deg: float = 0.0
    brightness_delta: float = 0.0
    contrast_scale: float = 1.0
    channel_jitter: tuple = (0.0, 0.0, 0.0)

    @property
    def is_identity(self) -> bool:
        return (
            not self.flip
            and self.rotation_deg == 0.0
            and self.brightness_delta == 0.0
            and self.contrast_scale == 1.0
            and not any(self.channel_jitter)
        )


def sample_augment(rng, max_rot: float = 10.0, max_brightness: float = 20.0,
                   contrast=(0.9, 1.1), max_channel: float = 8.0) -> AugmentSpec:
    return AugmentSpec(
        flip=bool(rng.random() < 0.5),
        rotation_deg=float(rng.uniform(-max_rot, max_rot)),
        brightness_delta=float(rng.uniform(-max_brightness, max_brightness)),
        contrast_scale=float(rng.uniform(*contrast)),
        channel_jitter=tuple(float(v) for v in rng.uniform(-max_channel, max_channel, 3)),
    )


def augment(patch: FacePatch, spec: AugmentSpec, rng=None) -> FacePatch:
    """Flip, then rotate about the centre, then photometric jitter.

    ``rng`` is accepted for interface symmetry; the spec fully determines the
    transform.
    """
    if spec.is_identity:
        return FacePatch(patch.pixels.copy())
    img = patch.pixels.astype(np.float64)
    if spec.flip:
        img = img[:, ::-1]
    if spec.rotation_deg != 0.0:
        img = rotate_array(img, spec.rotation_deg)
    img = (img - 128.0) * spec.contrast_scale + 128.0 + spec.brightness_delta
    jitter = np.asarray(spec.channel_jitter[: img.shape[2]], dtype=np.float64)
    if img.shape[2] == 1:
        jitter = jitter[:1]
    img = img + jitter
    return FacePatch(np.clip(np.rint(img), 0, 255).astype(np.uint8))
