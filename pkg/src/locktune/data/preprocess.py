from __future__ import annotations

import math

import numpy as np
from PIL import Image

from ..errors import DegenerateInputError

# CLIP channel statistics, R, G, B
CLIP_MEAN = np.array([0.48145466, 0.4578275, 0.40821073])
CLIP_STD = np.array([0.26862954, 0.26130258, 0.27577711])


def _to_unit_float(raster: np.ndarray) -> np.ndarray:
    a = np.asarray(raster)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DegenerateInputError(f"expected an RGB raster [H, W, 3], got {a.shape}")
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    return a.astype(np.float64)


def _resize_bicubic(img: np.ndarray, height: int, width: int) -> np.ndarray:
    if img.shape[:2] == (height, width):
        return img.copy()
    out = np.empty((height, width, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        ch = Image.fromarray(np.ascontiguousarray(img[..., c], dtype=np.float32))
        out[..., c] = np.asarray(ch.resize((width, height), resample=Image.Resampling.BICUBIC), dtype=np.float64)
    return out


def resize_shorter_side(img: np.ndarray, short: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h <= w:
        nh, nw = short, max(short, int(round(w * short / h)))
    else:
        nh, nw = max(short, int(round(h * short / w))), short
    return _resize_bicubic(img, nh, nw)


def normalize(img: np.ndarray) -> np.ndarray:
    """[S, S, 3] in [0, 1] -> channel-first, CLIP-normalised [3, S, S]."""
    return np.ascontiguousarray(((img - CLIP_MEAN) / CLIP_STD).transpose(2, 0, 1))


def preprocess(
    raster: np.ndarray,
    target_size: int,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    crop_scale: tuple[float, float] = (0.9, 1.0),
) -> np.ndarray:
    """Bicubic resize of the shorter side, S x S crop, CLIP normalisation.

    Eval mode crops the centre. Train mode draws an area scale s from
    `crop_scale`, resizes the shorter side to S / sqrt(s) and shifts the crop
    randomly within the slack this creates; with s fixed at 1 it is the eval
    path exactly.
    """
    img = _to_unit_float(raster)
    h, w = img.shape[:2]
    s = int(target_size)
    if min(h, w) < s / 2:
        raise DegenerateInputError(f"raster {h}x{w} is too small for target size {s}")

    short = s
    if train_mode:
        if rng is None:
            raise ValueError("train-mode preprocessing needs an explicit rng")
        lo, hi = crop_scale
        scale = lo if lo == hi else float(rng.uniform(lo, hi))
        short = max(s, int(round(s / math.sqrt(scale))))

    img = resize_shorter_side(img, short)
    rh, rw = img.shape[:2]
    top, left = (rh - s) // 2, (rw - s) // 2
    if train_mode:
        slack = short - s
        assert rng is not None
        top += int(rng.integers(0, slack + 1)) - slack // 2
        left += int(rng.integers(0, slack + 1)) - slack // 2
    return normalize(img[top : top + s, left : left + s])
