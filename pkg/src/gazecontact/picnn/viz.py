"""Image grids of first-layer filters and early activation maps."""

from __future__ import annotations

import math
import os

import numpy as np

from ..errors import IoError
from ..imaging import write_netpbm


def _to_u8(a: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 255]. A constant array becomes uniform: black when
    it is all zero (a dead map), mid-grey otherwise."""
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        return np.rint((a - lo) * (255.0 / (hi - lo))).astype(np.uint8)
    return np.full(a.shape, 0 if hi == 0 else 128, dtype=np.uint8)


def tile(images: list, pad: int = 1, fill: int = 0) -> np.ndarray:
    """Arrange equally sized (h, w[, c]) u8 images on a near-square grid."""
    n = len(images)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    h, w = images[0].shape[:2]
    shape = (rows * (h + pad) + pad, cols * (w + pad) + pad) + images[0].shape[2:]
    grid = np.full(shape, fill, dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = img
    return grid


def filter_tiles(model) -> list:
    """One RGB tile per conv1 filter, each scaled independently."""
    w = model.params["conv1"][0]  # (F, 3, k, k)
    return [_to_u8(np.transpose(f, (1, 2, 0)).astype(np.float64)) for f in w]


def activation_grids(model, patch: np.ndarray, layers: int = 3) -> list:
    """Per-layer grids of post-ReLU maps for one u8 (S, S, 3) patch.

    Maps within a layer share one scale, so relative strength is visible.
    """
    maps = model.activations(np.asarray(patch)[None], upto=layers)
    grids = []
    for m in maps:
        a = m[0].astype(np.float64)  # (h, w, F)
        u8 = _to_u8(a)
        grids.append(tile([u8[..., f] for f in range(a.shape[2])], fill=255))
    return grids


def dump_filters_and_activations(model, patch: np.ndarray, out_dir, upscale: int = 4) -> list:
    """Write ``conv1_filters.ppm`` and ``conv{1,2,3}_activations.pgm``; returns the paths."""
    if not os.path.isdir(out_dir):
        raise IoError(f"output directory does not exist: {out_dir}")
    paths = []
    tiles = [np.kron(t, np.ones((upscale, upscale, 1), dtype=np.uint8)) for t in filter_tiles(model)]
    p = os.path.join(out_dir, "conv1_filters.ppm")
    write_netpbm(p, tile(tiles, pad=2, fill=255))
    paths.append(p)
    for i, g in enumerate(activation_grids(model, patch), start=1):
        p = os.path.join(out_dir, f"conv{i}_activations.pgm")
        write_netpbm(p, g)
        paths.append(p)
    return paths
