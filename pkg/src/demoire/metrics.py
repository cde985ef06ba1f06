"""Image quality measures: PSNR, luma PSNR, SSIM, CIE76 color difference.

All functions take float arrays in [0,1] conventions with channels first
where applicable; identical inputs report +inf PSNR (the infinity is the
flag) and exact 1.0 / 0.0 for SSIM / delta E.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .color import srgb_to_ycc

__all__ = ["MetricReport", "psnr", "y_psnr", "ssim", "delta_e",
           "measure_pair", "mean_report"]

# RGB -> XYZ under D65; the white point is the row sums so that (1,1,1)
# lands exactly on L*=100, a*=b*=0.
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
], dtype=np.float64)
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_GAMMA = 2.2  # pure power-law linearization, pinned for exact tests


@dataclass
class MetricReport:
    """Arithmetic means over n_images; infinities propagate as flags."""

    psnr_db: float
    y_psnr_db: float
    ssim: float
    delta_e: float
    n_images: int


def _check_shapes(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE) over every element; +inf for identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b, "psnr")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def y_psnr(a, b, peak=1.0):
    """PSNR restricted to the luma plane of each sRGB image."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    _check_shapes(a, b, "y_psnr")
    return psnr(srgb_to_ycc(a)[0], srgb_to_ycc(b)[0], peak=peak)


def _gaussian_window(win=11, sigma=1.5):
    ax = np.arange(win, dtype=np.float64) - win // 2
    g = np.exp(-(ax ** 2) / (2.0 * sigma * sigma))
    kern = np.outer(g, g)
    return kern / kern.sum()


def _ssim_channel(a, b, kern, c1, c2):
    mu_a = convolve2d(a, kern, mode="valid")
    mu_b = convolve2d(b, kern, mode="valid")
    var_a = convolve2d(a * a, kern, mode="valid") - mu_a * mu_a
    var_b = convolve2d(b * b, kern, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, kern, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak=1.0, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity, valid-region 11x11 Gaussian windows.

    Accepts (h,w) or (c,h,w); channels are averaged. The symmetric Gaussian
    window makes the correlation identical to convolution.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b, "ssim")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim: expected (h,w) or (c,h,w), got {a.shape}")
    if min(a.shape[1:]) < win:
        raise ValueError(
            f"ssim: image {a.shape[1:]} smaller than {win}x{win} window")
    kern = _gaussian_window(win, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = [_ssim_channel(a[i], b[i], kern, c1, c2)
            for i in range(a.shape[0])]
    return float(np.mean(vals))


def _srgb_to_lab(img):
    """(3,h,w) sRGB in [0,1] -> (3,h,w) CIE Lab, float64."""
    lin = np.power(np.asarray(img, dtype=np.float64), _GAMMA)
    xyz = np.tensordot(_RGB_TO_XYZ, lin, axes=1)
    t = xyz / _WHITE[:, None, None]
    d = 6.0 / 29.0
    f = np.where(t > d ** 3, np.cbrt(t), t / (3.0 * d * d) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[0] = 116.0 * f[1] - 16.0
    lab[1] = 500.0 * (f[0] - f[1])
    lab[2] = 200.0 * (f[1] - f[2])
    return lab


def delta_e(a, b):
    """Mean per-pixel CIE76 color difference between two sRGB images.

    Linearization is a pure 2.2 power law and no spatial pre-filtering is
    applied, so values are self-consistent rather than standards-exact.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b, "delta_e")
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"delta_e: expected (3,h,w), got {a.shape}")
    diff = _srgb_to_lab(a) - _srgb_to_lab(b)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=0))))


def measure_pair(out, gt):
    """All four measures for one restored/reference sRGB pair."""
    return MetricReport(psnr_db=psnr(out, gt), y_psnr_db=y_psnr(out, gt),
                        ssim=ssim(out, gt), delta_e=delta_e(out, gt),
                        n_images=1)


def mean_report(reports):
    """Aggregate per-image reports by arithmetic mean."""
    reports = list(reports)
    if not reports:
        raise ValueError("mean_report: no reports")
    n = sum(r.n_images for r in reports)

    def avg(field):
        return sum(getattr(r, field) * r.n_images for r in reports) / n

    return MetricReport(psnr_db=avg("psnr_db"), y_psnr_db=avg("y_psnr_db"),
                        ssim=avg("ssim"), delta_e=avg("delta_e"), n_images=n)
