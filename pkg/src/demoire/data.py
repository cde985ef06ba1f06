"""Dataset loading, CFA-aware augmentation, and model tensor assembly.

Desk-scale datasets fit in memory, so pairs are loaded eagerly and every
step just crops and converts. The mosaic is kept at full resolution as
normalized float; packing to 4 planes and building the guidance image
happen after cropping so that crops stay CFA-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .color import (pack_rggb, rgb_to_hsv, rgb_to_yuv, srgb_to_ycc)
from .sim import load_manifest, load_pair

__all__ = ["LoadedPair", "load_pairs", "sample_crop", "guidance_image",
           "pool2", "pair_tensors", "batch_tensors", "GUIDANCE_SPACES"]

# Guidance color space per ablation variant; everything else uses YCbCr.
GUIDANCE_SPACES = {"hsv_branch": "hsv", "yuv_branch": "yuv"}


@dataclass
class LoadedPair:
    """One pair held in memory: normalized mosaic plus the sRGB target."""

    mosaic: np.ndarray
    gt_srgb: np.ndarray
    index: int


def load_pairs(data_dir):
    """Load every pair listed in the directory's manifest."""
    rows = load_manifest(data_dir)
    pairs = []
    for row in rows:
        pair = load_pair(data_dir, row["index"])
        pairs.append(LoadedPair(mosaic=pack_rggb(pair.input).tensor,
                                gt_srgb=pair.gt_srgb, index=row["index"]))
    # Re-expand the packed planes to a full-resolution normalized mosaic;
    # augmentation needs the flat layout to reason about CFA phase.
    for p in pairs:
        t = p.mosaic
        h, w = t.shape[1:]
        flat = np.empty((2 * h, 2 * w), dtype=np.float32)
        flat[0::2, 0::2] = t[0]
        flat[0::2, 1::2] = t[1]
        flat[1::2, 0::2] = t[2]
        flat[1::2, 1::2] = t[3]
        p.mosaic = flat
    if not pairs:
        raise ValueError(f"no pairs listed in {data_dir}/manifest.csv")
    return pairs


def sample_crop(rng, pair, crop, augment):
    """Random CFA-aligned crop with optional horizontal flip.

    Flipping the mosaic turns RGGB into GRBG; starting the crop on an odd
    column restores RGGB, so flips are only drawn when an odd offset fits.
    The draw count per call is fixed (flip, row, column) to keep the
    stream deterministic.
    """
    h, w = pair.mosaic.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} exceeds pair size {h}x{w}")
    flip = bool(augment and w - crop >= 2 and rng.integers(2))
    y0 = 2 * int(rng.integers((h - crop) // 2 + 1))
    if flip:
        x0 = 2 * int(rng.integers((w - crop) // 2)) + 1
        mosaic = pair.mosaic[:, ::-1]
        gt = pair.gt_srgb[:, :, ::-1]
    else:
        x0 = 2 * int(rng.integers((w - crop) // 2 + 1))
        mosaic = pair.mosaic
        gt = pair.gt_srgb
    return (np.ascontiguousarray(mosaic[y0:y0 + crop, x0:x0 + crop]),
            np.ascontiguousarray(gt[:, y0:y0 + crop, x0:x0 + crop]))


def pool2(img):
    """2x2 average pooling of a (3, 2h, 2w) image."""
    return 0.25 * (img[:, 0::2, 0::2] + img[:, 0::2, 1::2]
                   + img[:, 1::2, 0::2] + img[:, 1::2, 1::2])


def _to_space(rgb, space):
    if space == "ycc":
        return srgb_to_ycc(rgb)
    if space == "hsv":
        return rgb_to_hsv(rgb)
    if space == "yuv":
        return rgb_to_yuv(rgb)
    raise ValueError(f"unknown guidance space {space!r}")


def guidance_image(mosaic, space="ycc"):
    """Half-resolution guidance from a normalized mosaic: greens averaged
    per site, then converted to the variant's color space."""
    rgb = np.stack([
        mosaic[0::2, 0::2],
        0.5 * (mosaic[0::2, 1::2] + mosaic[1::2, 0::2]),
        mosaic[1::2, 1::2],
    ]).astype(np.float32)
    return _to_space(rgb, space)


def pair_tensors(mosaic, gt, space="ycc"):
    """Model inputs and targets for one cropped pair, as plain arrays:
    (packed raw, guidance, gt sRGB, auxiliary target)."""
    packed = np.stack([
        mosaic[0::2, 0::2],
        mosaic[0::2, 1::2],
        mosaic[1::2, 0::2],
        mosaic[1::2, 1::2],
    ]).astype(np.float32)
    guide = guidance_image(mosaic, space)
    aux = _to_space(pool2(gt).astype(np.float32), space)
    return packed, guide, gt.astype(np.float32), aux


def batch_tensors(crops, space="ycc"):
    """Stack cropped (mosaic, gt) pairs into engine tensors."""
    packed, guide, gt, aux = zip(*(pair_tensors(m, g, space)
                                   for m, g in crops))
    return (T.Tensor(np.stack(packed)), T.Tensor(np.stack(guide)),
            T.Tensor(np.stack(gt)), T.Tensor(np.stack(aux)))
