"""Synthetic screen-capture simulator producing paired training data.

Models a camera photographing an emissive display: the content is rendered
onto an RGB-stripe subpixel grid with an inter-pixel black mask, then the
capture path resamples that radiance field through a rotated and scaled
sensor, defocuses, applies a luminance gain, point-samples through an RGGB
CFA, adds read noise, and quantizes to 10-bit levels in a 16-bit container.
Aliasing bands arise from point-sampling the grid below Nyquist; this and
the deliberate luminance mismatch are the two degradations the restoration
model is trained to undo.

The ground truth for a pair is the same geometric resampling of the clean
content, so input and target stay pixel-aligned while grid, blur, gain,
noise, and quantization remain input-only. All randomness flows from
explicit integer seeds; regeneration is bit-identical.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, fields

import numpy as np
from scipy.ndimage import gaussian_filter

from .color import (
    BayerImage,
    demosaic_bilinear,
    load_srgb_png,
    save_bayer,
    load_bayer,
    save_srgb_png,
    srgb_to_ycc,
)
from .metrics import psnr

__all__ = [
    "STRIPE_APERTURE",
    "ROW_APERTURE",
    "BLACK_LEVEL",
    "WHITE_LEVEL",
    "ScreenModel",
    "CaptureModel",
    "RadianceField",
    "SynthPair",
    "duty_cycle",
    "render_screen",
    "simulate_capture",
    "resample_reference",
    "make_pair",
    "degradation_psnr",
    "procedural_content",
    "save_pair",
    "load_pair",
    "load_manifest",
    "dataset_generate",
    "TRAIN_SCREEN_RANGES",
    "TRAIN_CAPTURE_RANGES",
    "HELDOUT_SCREEN_RANGES",
    "HELDOUT_CAPTURE_RANGES",
    "OVERFIT_SCREEN_RANGES",
    "OVERFIT_CAPTURE_RANGES",
    "RANGE_PRESETS",
]

# Lit fraction of each subpixel stripe (horizontal) and of each pixel row
# (vertical); the remainder is black matrix. Fixed properties of the layout.
STRIPE_APERTURE = 0.8
ROW_APERTURE = 0.8

BLACK_LEVEL = 64
WHITE_LEVEL = 1023


@dataclass(frozen=True)
class ScreenModel:
    """Display geometry: subpixel pitch in content pixels, mask strength."""

    subpixel_pitch: float = 4.0
    subpixel_layout: str = "RGB-stripe"
    grid_contrast: float = 0.7

    def __post_init__(self):
        if self.subpixel_pitch <= 1.0:
            raise ValueError("subpixel_pitch must exceed 1.0 content pixel")
        if self.subpixel_layout != "RGB-stripe":
            raise ValueError(f"unsupported layout {self.subpixel_layout!r}")
        if not 0.0 <= self.grid_contrast <= 1.0:
            raise ValueError("grid_contrast must lie in [0, 1]")


@dataclass(frozen=True)
class CaptureModel:
    """Camera geometry, optics, exposure, and sensor noise parameters."""

    rotation_deg: float = 0.0
    scale: float = 1.0
    defocus_sigma: float = 0.0
    luminance_gain: float = 1.0
    read_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.defocus_sigma < 0.0:
            raise ValueError("defocus_sigma must be nonnegative")
        if self.luminance_gain <= 0.0:
            raise ValueError("luminance_gain must be positive")
        if self.read_noise_sigma < 0.0:
            raise ValueError("read_noise_sigma must be nonnegative")


@dataclass
class RadianceField:
    """Oversampled screen emission plus the mask's analytic duty cycle."""

    data: np.ndarray
    oversample: int
    duty_cycle: float


@dataclass
class SynthPair:
    """One training pair: moire mosaic input and aligned clean targets."""

    input: BayerImage
    gt_srgb: np.ndarray
    gt_ycc: np.ndarray
    meta: dict

    def __post_init__(self):
        # The chroma target is definitionally tied to the sRGB target.
        if self.gt_ycc.shape != self.gt_srgb.shape:
            raise ValueError("gt_ycc and gt_srgb must share a shape")


def duty_cycle(screen):
    """Mean lit fraction of the masked grid, integrated analytically.

    Each channel is emitted from its own stripe (1/3 of the cell) with
    STRIPE_APERTURE x ROW_APERTURE of that stripe lit; the mask darkens the
    rest by grid_contrast. Mean radiance of rendered content equals the
    content mean times this factor.
    """
    lit = STRIPE_APERTURE * ROW_APERTURE / 3.0
    return 1.0 - screen.grid_contrast * (1.0 - lit)


def _periodic_coverage(n, period, start, stop):
    """Area overlap of each unit cell [k, k+1) with the periodic intervals
    [start + m*period, stop + m*period); exact, not point-sampled."""
    span = stop - start
    edges = np.arange(n + 1, dtype=np.float64)
    cycles = np.floor(edges / period)
    frac = edges - cycles * period
    cum = cycles * span + np.clip(frac - start, 0.0, span)
    return np.diff(cum)


def render_screen(content, screen, oversample=4):
    """Render sRGB content onto the masked subpixel grid.

    Content pixels are replicated oversample times per axis; the stripe and
    row masks are area-sampled per field cell, so grid_contrast = 0 returns
    plain upsampling exactly.
    """
    content = np.asarray(content, dtype=np.float32)
    if content.ndim != 3 or content.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) content, got {content.shape}")
    if content.min() < 0.0 or content.max() > 1.0:
        raise ValueError("content must lie in [0, 1]")
    if oversample < 2:
        raise ValueError("oversample must be at least 2")
    field = np.repeat(np.repeat(content, oversample, axis=1),
                      oversample, axis=2)
    gc = screen.grid_contrast
    if gc > 0.0:
        period = screen.subpixel_pitch * oversample
        hf, wf = field.shape[1:]
        row_lo = 0.5 * (1.0 - ROW_APERTURE) * period
        rows = _periodic_coverage(hf, period, row_lo,
                                  row_lo + ROW_APERTURE * period)
        stripe = period / 3.0
        pad = 0.5 * (1.0 - STRIPE_APERTURE) * stripe
        for c in range(3):
            lo = c * stripe + pad
            cols = _periodic_coverage(wf, period, lo, lo + STRIPE_APERTURE * stripe)
            mask = (1.0 - gc) + gc * rows[:, None] * cols[None, :]
            field[c] *= mask.astype(np.float32)
    return RadianceField(data=field, oversample=oversample,
                         duty_cycle=duty_cycle(screen))


def _sensor_grid(cap, out_hw, content_hw):
    """Content-space coordinates of each sensor pixel center: rotate by
    rotation_deg and stretch by scale about the shared image center."""
    h, w = out_hw
    hc, wc = content_hw
    yy = (np.arange(h, dtype=np.float64) + 0.5 - 0.5 * h)[:, None]
    xx = (np.arange(w, dtype=np.float64) + 0.5 - 0.5 * w)[None, :]
    theta = math.radians(cap.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    qy = cap.scale * (cos_t * yy - sin_t * xx) + 0.5 * hc
    qx = cap.scale * (sin_t * yy + cos_t * xx) + 0.5 * wc
    return qy, qx


def _bilinear_gather(plane, yy, xx):
    """Bilinear taps at (yy, xx) sample indices; caller guarantees bounds."""
    h, w = plane.shape
    y0 = np.clip(np.floor(yy).astype(np.int64), 0, h - 2)
    x0 = np.clip(np.floor(xx).astype(np.int64), 0, w - 2)
    fy = (yy - y0).astype(np.float32)
    fx = (xx - x0).astype(np.float32)
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x0 + 1] * fx
    bot = plane[y0 + 1, x0] * (1.0 - fx) + plane[y0 + 1, x0 + 1] * fx
    return top * (1.0 - fy) + bot * fy


def _check_margin(yy, xx, h, w, what):
    if (yy.min() < 0.0 or xx.min() < 0.0
            or yy.max() > h - 1.0 or xx.max() > w - 1.0):
        raise ValueError(
            f"rotation/scale push the sensor outside the {what}; "
            f"render larger content or shrink the output")


def _require_even(out_hw):
    h, w = out_hw
    if h % 2 or w % 2 or h < 2 or w < 2:
        raise ValueError(f"sensor dimensions must be even, got {h}x{w}")


def simulate_capture(field, cap, out_size=None):
    """Photograph a rendered field into an RGGB mosaic.

    Chain: rotate+scale bilinear resample, Gaussian defocus, luminance
    gain, CFA point sampling, Gaussian read noise, quantization to
    BLACK_LEVEL/WHITE_LEVEL. The gain is defined relative to an exposure
    that normalizes out the field's duty cycle, so gain = 1 reproduces the
    content's mean brightness regardless of grid_contrast.
    """
    os_ = field.oversample
    hf, wf = field.data.shape[1:]
    hc, wc = hf // os_, wf // os_
    out_hw = (hc, wc) if out_size is None else tuple(out_size)
    _require_even(out_hw)
    qy, qx = _sensor_grid(cap, out_hw, (hc, wc))
    fy = qy * os_ - 0.5
    fx = qx * os_ - 0.5
    _check_margin(fy, fx, hf, wf, "rendered field")
    rgb = np.stack([_bilinear_gather(field.data[c], fy, fx)
                    for c in range(3)])
    if cap.defocus_sigma > 0.0:
        for c in range(3):
            rgb[c] = gaussian_filter(rgb[c], cap.defocus_sigma,
                                     mode="nearest")
    rgb *= np.float32(cap.luminance_gain / field.duty_cycle)
    h, w = out_hw
    mosaic = np.empty((h, w), dtype=np.float32)
    mosaic[0::2, 0::2] = rgb[0, 0::2, 0::2]
    mosaic[0::2, 1::2] = rgb[1, 0::2, 1::2]
    mosaic[1::2, 0::2] = rgb[1, 1::2, 0::2]
    mosaic[1::2, 1::2] = rgb[2, 1::2, 1::2]
    if cap.read_noise_sigma > 0.0:
        rng = np.random.default_rng(cap.seed)
        noise = rng.normal(0.0, cap.read_noise_sigma, mosaic.shape)
        mosaic = mosaic + noise.astype(np.float32)
    span = WHITE_LEVEL - BLACK_LEVEL
    dn = np.clip(np.round(BLACK_LEVEL + mosaic.astype(np.float64) * span),
                 0, WHITE_LEVEL).astype(np.uint16)
    return BayerImage(data=dn, cfa="RGGB", black_level=BLACK_LEVEL,
                      white_level=WHITE_LEVEL)


def resample_reference(content, cap, out_size=None):
    """The clean counterpart of simulate_capture: identical geometry on the
    unmasked content with no blur, gain, noise, or quantization."""
    content = np.asarray(content, dtype=np.float32)
    hc, wc = content.shape[1:]
    out_hw = (hc, wc) if out_size is None else tuple(out_size)
    _require_even(out_hw)
    qy, qx = _sensor_grid(cap, out_hw, (hc, wc))
    fy = qy - 0.5
    fx = qx - 0.5
    _check_margin(fy, fx, hc, wc, "content")
    out = np.stack([_bilinear_gather(content[c], fy, fx) for c in range(3)])
    return np.clip(out, 0.0, 1.0)


def _quantize_like_png(img):
    """Replicate the 8-bit PNG round trip so in-memory targets match what
    load_pair reads back, bit for bit."""
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return q.astype(np.float32) / 255.0


def make_pair(content, screen, cap, out_size=None, oversample=4):
    """Generate one aligned (moire mosaic, clean sRGB, clean YCbCr) pair."""
    field = render_screen(content, screen, oversample=oversample)
    mosaic = simulate_capture(field, cap, out_size=out_size)
    gt_srgb = _quantize_like_png(resample_reference(content, cap,
                                                    out_size=out_size))
    meta = {f.name: getattr(screen, f.name) for f in fields(ScreenModel)}
    meta.update({f.name: getattr(cap, f.name) for f in fields(CaptureModel)})
    meta["oversample"] = oversample
    return SynthPair(input=mosaic, gt_srgb=gt_srgb,
                     gt_ycc=srgb_to_ycc(gt_srgb), meta=meta)


def degradation_psnr(pair):
    """PSNR of the naively demosaicked input against the sRGB target; the
    reference measure of how damaged a pair's input is."""
    b = pair.input
    span = float(b.white_level - b.black_level)
    norm = np.clip((b.data.astype(np.float32) - b.black_level) / span,
                   0.0, 1.0)
    return psnr(demosaic_bilinear(norm), pair.gt_srgb)


def procedural_content(rng, hw):
    """Deterministic synthetic content: smooth gradients, soft color
    blocks, and thin strokes that give demosaicking real edges to alias."""
    h, w = hw
    yy = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    xx = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :]
    img = np.empty((3, h, w), dtype=np.float32)
    for c in range(3):
        gy, gx = rng.uniform(-0.35, 0.35, size=2)
        freq_y, freq_x = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img[c] = (0.5 + gy * (yy - 0.5) + gx * (xx - 0.5)
                  + 0.18 * np.sin(2.0 * np.pi * (freq_y * yy + freq_x * xx)
                                  + phase))
    for _ in range(6):
        y0, y1 = np.sort(rng.integers(0, h, size=2))
        x0, x1 = np.sort(rng.integers(0, w, size=2))
        color = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
        alpha = np.float32(rng.uniform(0.5, 0.9))
        img[:, y0:y1 + 1, x0:x1 + 1] *= 1.0 - alpha
        img[:, y0:y1 + 1, x0:x1 + 1] += alpha * color[:, None, None]
    for _ in range(4):
        level = np.float32(rng.uniform(0.0, 1.0))
        thick = int(rng.integers(1, 3))
        if rng.integers(0, 2):
            y = int(rng.integers(0, h - thick))
            x0, x1 = np.sort(rng.integers(0, w, size=2))
            img[:, y:y + thick, x0:x1 + 1] = level
        else:
            x = int(rng.integers(0, w - thick))
            y0, y1 = np.sort(rng.integers(0, h, size=2))
            img[:, y0:y1 + 1, x:x + thick] = level
    return np.clip(img, 0.0, 1.0)


# -- on-disk dataset ---------------------------------------------------------

# Generation ranges, uniform per parameter. The held-out intervals are
# disjoint from the training intervals in every parameter, so a model
# evaluated there sees only unseen degradation combinations.
TRAIN_SCREEN_RANGES = {
    "subpixel_pitch": (3.4, 5.0),
    "grid_contrast": (0.45, 0.70),
}
TRAIN_CAPTURE_RANGES = {
    "rotation_deg": (1.0, 5.0),
    "scale": (0.96, 1.07),
    "defocus_sigma": (0.4, 1.0),
    "luminance_gain": (0.75, 1.30),
    "read_noise_sigma": (0.001, 0.003),
}
HELDOUT_SCREEN_RANGES = {
    "subpixel_pitch": (5.1, 6.0),
    "grid_contrast": (0.72, 0.85),
}
HELDOUT_CAPTURE_RANGES = {
    "rotation_deg": (5.3, 7.5),
    "scale": (1.08, 1.14),
    "defocus_sigma": (1.05, 1.50),
    "luminance_gain": (0.62, 0.73),
    "read_noise_sigma": (0.0032, 0.005),
}
# Gentle degradations for memorization smoke tests: faint grid, near-axis
# geometry, clean exposure. The restoration target stays reachable from a
# handful of pairs in a short run.
OVERFIT_SCREEN_RANGES = {
    "subpixel_pitch": (4.0, 4.6),
    "grid_contrast": (0.20, 0.30),
}
OVERFIT_CAPTURE_RANGES = {
    "rotation_deg": (0.6, 1.2),
    "scale": (0.99, 1.01),
    "defocus_sigma": (0.0, 0.0),
    "luminance_gain": (1.0, 1.0),
    "read_noise_sigma": (0.0, 0.0),
}
RANGE_PRESETS = {
    "train": (TRAIN_SCREEN_RANGES, TRAIN_CAPTURE_RANGES),
    "heldout": (HELDOUT_SCREEN_RANGES, HELDOUT_CAPTURE_RANGES),
    "overfit": (OVERFIT_SCREEN_RANGES, OVERFIT_CAPTURE_RANGES),
}

_MANIFEST_COLUMNS = [
    "index", "content", "crop_y", "crop_x", "subpixel_pitch",
    "grid_contrast", "rotation_deg", "scale", "defocus_sigma",
    "luminance_gain", "read_noise_sigma", "pair_seed", "input_psnr",
]


def _pair_paths(directory, index):
    return (os.path.join(directory, f"pair_{index}_input.pgm"),
            os.path.join(directory, f"pair_{index}_gt.png"))


def save_pair(directory, index, pair):
    input_path, gt_path = _pair_paths(directory, index)
    save_bayer(input_path, pair.input)
    save_srgb_png(gt_path, pair.gt_srgb)


def load_pair(directory, index):
    """Read one pair back; gt_ycc is recomputed from the stored sRGB so the
    conversion invariant holds exactly for loaded pairs too."""
    input_path, gt_path = _pair_paths(directory, index)
    mosaic = load_bayer(input_path)
    gt_srgb = load_srgb_png(gt_path)
    return SynthPair(input=mosaic, gt_srgb=gt_srgb,
                     gt_ycc=srgb_to_ycc(gt_srgb), meta={})


def load_manifest(directory):
    """Manifest rows as dicts with numeric fields parsed."""
    rows = []
    with open(os.path.join(directory, "manifest.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            for key in ("index", "crop_y", "crop_x", "pair_seed"):
                row[key] = int(row[key])
            for key in _MANIFEST_COLUMNS[4:11] + ["input_psnr"]:
                row[key] = float(row[key])
            rows.append(row)
    return rows


def _content_extent(out_hw, screen_ranges, cap_ranges):
    """Even content dims that keep every draw's sensor footprint inside the
    rendered field, with slack for bilinear taps."""
    h, w = out_hw
    rot_lo, rot_hi = cap_ranges["rotation_deg"]
    theta = math.radians(max(abs(rot_lo), abs(rot_hi)))
    scale_hi = cap_ranges["scale"][1]
    need_h = scale_hi * (h * math.cos(theta) + w * math.sin(theta)) + 6.0
    need_w = scale_hi * (w * math.cos(theta) + h * math.sin(theta)) + 6.0
    return (2 * math.ceil(need_h / 2.0), 2 * math.ceil(need_w / 2.0))


def _draw_content(rng, source_files, content_hw, size):
    """Pick (content, name, crop) for one pair; draw order is fixed so the
    per-pair stream is reproducible."""
    if source_files is None:
        return procedural_content(rng, content_hw), "procedural", 0, 0
    name, img = source_files[int(rng.integers(len(source_files)))]
    h, w = img.shape[1:]
    crop_y = int(rng.integers(h - content_hw[0] + 1))
    crop_x = int(rng.integers(w - content_hw[1] + 1))
    crop = img[:, crop_y:crop_y + content_hw[0],
               crop_x:crop_x + content_hw[1]]
    return crop, name, crop_y, crop_x


def dataset_generate(out_dir, n, size=(64, 64), content_source=None,
                     screen_ranges=None, cap_ranges=None, seed=0,
                     oversample=4):
    """Write n pairs plus manifest.csv into out_dir.

    Each pair's parameters are drawn from a stream seeded by (seed, index),
    so pairs are independent of n and of each other; the manifest logs every
    draw. content_source is a directory of PNGs to crop from, or None for
    procedural content.
    """
    screen_ranges = dict(TRAIN_SCREEN_RANGES if screen_ranges is None
                         else screen_ranges)
    cap_ranges = dict(TRAIN_CAPTURE_RANGES if cap_ranges is None
                      else cap_ranges)
    _require_even(size)
    os.makedirs(out_dir, exist_ok=True)
    content_hw = _content_extent(size, screen_ranges, cap_ranges)

    source_files = None
    if content_source is not None:
        names = sorted(fn for fn in os.listdir(content_source)
                       if fn.lower().endswith(".png"))
        loaded = [(fn, load_srgb_png(os.path.join(content_source, fn)))
                  for fn in names]
        source_files = [(fn, img) for fn, img in loaded
                        if img.shape[1] >= content_hw[0]
                        and img.shape[2] >= content_hw[1]]
        if not source_files:
            raise ValueError(
                f"no content in {content_source} is at least "
                f"{content_hw[0]}x{content_hw[1]}")

    rows = []
    for index in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        pitch = rng.uniform(*screen_ranges["subpixel_pitch"])
        gc = rng.uniform(*screen_ranges["grid_contrast"])
        screen = ScreenModel(subpixel_pitch=pitch, grid_contrast=gc)
        cap = CaptureModel(
            rotation_deg=rng.uniform(*cap_ranges["rotation_deg"]),
            scale=rng.uniform(*cap_ranges["scale"]),
            defocus_sigma=rng.uniform(*cap_ranges["defocus_sigma"]),
            luminance_gain=rng.uniform(*cap_ranges["luminance_gain"]),
            read_noise_sigma=rng.uniform(*cap_ranges["read_noise_sigma"]),
            seed=int(rng.integers(2 ** 63)),
        )
        content, name, crop_y, crop_x = _draw_content(rng, source_files,
                                                      content_hw, size)
        pair = make_pair(content, screen, cap, out_size=size,
                         oversample=oversample)
        save_pair(out_dir, index, pair)
        rows.append({
            "index": index, "content": name,
            "crop_y": crop_y, "crop_x": crop_x,
            "subpixel_pitch": f"{pitch:.6f}",
            "grid_contrast": f"{gc:.6f}",
            "rotation_deg": f"{cap.rotation_deg:.6f}",
            "scale": f"{cap.scale:.6f}",
            "defocus_sigma": f"{cap.defocus_sigma:.6f}",
            "luminance_gain": f"{cap.luminance_gain:.6f}",
            "read_noise_sigma": f"{cap.read_noise_sigma:.6f}",
            "pair_seed": cap.seed,
            "input_psnr": f"{degradation_psnr(pair):.4f}",
        })

    with open(os.path.join(out_dir, "manifest.csv"), "w",
              newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
