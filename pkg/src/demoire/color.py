"""Bayer packing, color-space conversions, and image file formats.

Conversion functions operate on plain float arrays shaped (3, h, w) with
RGB in [0, 1]; the raw domain carries explicit container types because it
travels with black/white levels and a CFA tag. The YCbCr matrix is the
BT.601 full-range analog form with Cb/Cr in [-0.5, 0.5]; its inverse is the
exact matrix inverse, so round trips are limited only by float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = [
    "BayerImage",
    "PackedRaw",
    "YCC_FORWARD",
    "YCC_INVERSE",
    "pack_rggb",
    "unpack_rggb",
    "bayer_to_rgb_half",
    "bayer_to_ycc",
    "srgb_to_ycc",
    "ycc_to_srgb",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "rgb_to_yuv",
    "yuv_to_rgb",
    "demosaic_bilinear",
    "write_pgm16",
    "read_pgm16",
    "save_bayer",
    "load_bayer",
    "save_srgb_png",
    "load_srgb_png",
]


@dataclass
class BayerImage:
    """Mosaicked sensor frame: uint16 samples plus level metadata."""

    data: np.ndarray
    cfa: str = "RGGB"
    black_level: int = 64
    white_level: int = 1023

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("BayerImage data must be 2-D")
        if self.white_level <= self.black_level:
            raise ValueError("white_level must exceed black_level")


@dataclass
class PackedRaw:
    """Normalized 4-channel raw tensor, channel order (R, G1, G2, B)."""

    tensor: np.ndarray


def _check_rggb(b):
    if b.cfa != "RGGB":
        raise ValueError(f"unsupported CFA pattern {b.cfa!r}")
    h, w = b.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"Bayer dimensions must be even, got {h}x{w}")


def pack_rggb(b):
    """Pack a Bayer mosaic into (4, H, W) normalized planes.

    Values map through (v - black) / (white - black) and clamp to [0, 1].
    """
    _check_rggb(b)
    d = b.data.astype(np.float32)
    scale = 1.0 / float(b.white_level - b.black_level)
    norm = np.clip((d - float(b.black_level)) * scale, 0.0, 1.0)
    planes = np.stack([
        norm[0::2, 0::2],
        norm[0::2, 1::2],
        norm[1::2, 0::2],
        norm[1::2, 1::2],
    ]).astype(np.float32)
    return PackedRaw(tensor=planes)


def unpack_rggb(packed, black_level=64, white_level=1023):
    """Inverse of pack_rggb for in-range data (no clipping occurred)."""
    t = np.asarray(packed.tensor if isinstance(packed, PackedRaw) else packed)
    _, h, w = t.shape
    out = np.empty((2 * h, 2 * w), dtype=np.uint16)
    span = float(white_level - black_level)
    denorm = np.round(t.astype(np.float64) * span + black_level)
    out[0::2, 0::2] = denorm[0]
    out[0::2, 1::2] = denorm[1]
    out[1::2, 0::2] = denorm[2]
    out[1::2, 1::2] = denorm[3]
    return BayerImage(data=out, black_level=black_level,
                      white_level=white_level)


def bayer_to_rgb_half(b):
    """Half-resolution RGB from a mosaic: greens averaged per 2x2 site."""
    packed = pack_rggb(b).tensor
    g = 0.5 * (packed[1] + packed[2])
    return np.stack([packed[0], g, packed[3]]).astype(np.float32)


# BT.601 full-range: Y = 0.299 R + 0.587 G + 0.114 B,
# Cb = 0.564 (B - Y), Cr = 0.713 (R - Y).
YCC_FORWARD = np.array([
    [0.299, 0.587, 0.114],
    [0.564 * -0.299, 0.564 * -0.587, 0.564 * (1.0 - 0.114)],
    [0.713 * (1.0 - 0.299), 0.713 * -0.587, 0.713 * -0.114],
], dtype=np.float64)

YCC_INVERSE = np.linalg.inv(YCC_FORWARD)


def _apply_matrix(m, img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got {img.shape}")
    flat = img.reshape(3, -1)
    out = (m @ flat.astype(np.float64)).reshape(img.shape)
    return out.astype(np.float32)


def srgb_to_ycc(img):
    """(3, h, w) RGB in [0,1] -> (Y, Cb, Cr) with chroma in [-0.5, 0.5]."""
    return _apply_matrix(YCC_FORWARD, img)


def ycc_to_srgb(img):
    """Exact inverse of srgb_to_ycc; clamping is the caller's concern."""
    return _apply_matrix(YCC_INVERSE, img)


def bayer_to_ycc(b):
    """Mosaic -> half-resolution YCbCr via green averaging."""
    return srgb_to_ycc(bayer_to_rgb_half(b))


def rgb_to_hsv(img):
    """Hexcone HSV with H in [0, 1); gray pixels get H = S = 0."""
    img = np.asarray(img, dtype=np.float32)
    r, g, b = img[0], img[1], img[2]
    maxc = np.max(img, axis=0)
    minc = np.min(img, axis=0)
    v = maxc
    c = maxc - minc
    safe_max = np.where(maxc > 0, maxc, 1.0)
    s = np.where(maxc > 0, c / safe_max, 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h_r = np.mod((g - b) / safe_c, 6.0)
    h_g = (b - r) / safe_c + 2.0
    h_b = (r - g) / safe_c + 4.0
    h = np.where(maxc == r, h_r, np.where(maxc == g, h_g, h_b))
    h = np.where(c > 0, np.mod(h / 6.0, 1.0), 0.0)
    return np.stack([h, s, v]).astype(np.float32)


def hsv_to_rgb(img):
    """Inverse hexcone transform; exact on the S > 0 interior."""
    img = np.asarray(img, dtype=np.float32)
    h, s, v = img[0], img[1], img[2]
    h6 = np.mod(h, 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b]).astype(np.float32)


# BT.601 luma with analog U/V differences.
YUV_FORWARD = np.array([
    [0.299, 0.587, 0.114],
    [0.492 * -0.299, 0.492 * -0.587, 0.492 * (1.0 - 0.114)],
    [0.877 * (1.0 - 0.299), 0.877 * -0.587, 0.877 * -0.114],
], dtype=np.float64)

YUV_INVERSE = np.linalg.inv(YUV_FORWARD)


def rgb_to_yuv(img):
    """Y = BT.601 luma, U = 0.492 (B - Y), V = 0.877 (R - Y)."""
    return _apply_matrix(YUV_FORWARD, img)


def yuv_to_rgb(img):
    return _apply_matrix(YUV_INVERSE, img)


# R/B live on a 2x-subsampled quad grid, G on a quincunx; each gets the
# bilinear kernel matching its lattice so sampled sites pass through exactly.
_DEMOSAIC_QUAD = np.array([
    [0.25, 0.5, 0.25],
    [0.5, 1.0, 0.5],
    [0.25, 0.5, 0.25],
], dtype=np.float32)
_DEMOSAIC_QUINCUNX = np.array([
    [0.0, 0.25, 0.0],
    [0.25, 1.0, 0.25],
    [0.0, 0.25, 0.0],
], dtype=np.float32)


def demosaic_bilinear(bayer_norm):
    """Diagnostic full-resolution RGB from a normalized RGGB mosaic.

    Normalized-convolution bilinear interpolation per color plane; used to
    measure the degradation of a moire capture in the sRGB domain, not as a
    model input. Border taps renormalize over the samples that exist.
    """
    from scipy.ndimage import correlate

    z = np.asarray(bayer_norm, dtype=np.float32)
    h, w = z.shape
    if h % 2 or w % 2:
        raise ValueError("mosaic dimensions must be even")
    site_masks = np.zeros((3, h, w), dtype=np.float32)
    site_masks[0, 0::2, 0::2] = 1.0
    site_masks[1, 0::2, 1::2] = 1.0
    site_masks[1, 1::2, 0::2] = 1.0
    site_masks[2, 1::2, 1::2] = 1.0
    kernels = (_DEMOSAIC_QUAD, _DEMOSAIC_QUINCUNX, _DEMOSAIC_QUAD)
    out = np.empty((3, h, w), dtype=np.float32)
    for i in range(3):
        num = correlate(z * site_masks[i], kernels[i],
                        mode="constant", cval=0.0)
        den = correlate(site_masks[i], kernels[i],
                        mode="constant", cval=0.0)
        out[i] = num / den
    return np.clip(out, 0.0, 1.0)


# -- file formats ------------------------------------------------------------


def write_pgm16(path, data, maxval):
    """Binary P5 with 2-byte big-endian samples (maxval > 255)."""
    data = np.asarray(data)
    if data.dtype != np.uint16:
        raise ValueError("write_pgm16 expects uint16 data")
    if not 255 < maxval < 65536:
        raise ValueError("16-bit PGM requires 255 < maxval < 65536")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(data.astype(">u2").tobytes())


def read_pgm16(path):
    """Read a binary P5 file; returns (uint16 array, maxval)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # optionally interleaved with comment lines.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(blob):
            raise ValueError(f"{path}: truncated PGM header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1  # single whitespace after maxval
    if maxval <= 255 or maxval >= 65536:
        raise ValueError(f"{path}: expected 16-bit maxval, got {maxval}")
    need = w * h * 2
    payload = blob[pos:pos + need]
    if len(payload) != need:
        raise ValueError(f"{path}: truncated PGM payload")
    data = np.frombuffer(payload, dtype=">u2").reshape(h, w)
    return data.astype(np.uint16), maxval


def save_bayer(path, bayer):
    """Write mosaic + sidecar header (<path>.hdr, key=value lines)."""
    write_pgm16(path, bayer.data, bayer.white_level)
    sidecar = f"{path}.hdr"
    with open(sidecar, "w", encoding="ascii") as fh:
        fh.write(f"cfa={bayer.cfa}\n")
        fh.write(f"black={bayer.black_level}\n")
        fh.write(f"white={bayer.white_level}\n")


def load_bayer(path):
    data, maxval = read_pgm16(path)
    fields = {}
    with open(f"{path}.hdr", "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    black = int(fields["black"])
    white = int(fields["white"])
    if white != maxval:
        raise ValueError(f"{path}: sidecar white={white} != maxval={maxval}")
    return BayerImage(data=data, cfa=fields.get("cfa", "RGGB"),
                      black_level=black, white_level=white)


def save_srgb_png(path, img):
    """(3, h, w) floats in [0,1] -> 8-bit PNG via round(v * 255)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)


def load_srgb_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 255.0).transpose(2, 0, 1).copy()
