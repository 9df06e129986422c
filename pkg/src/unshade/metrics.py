"""Full-reference image metrics (PSNR, SSIM) for the evaluation protocol.

Default comparisons run in display-referred 8-bit-equivalent space
(sRGB-encoded luma scaled to peak 255) to match the conventions of the
cited evaluation protocols; pass space="linear" to compare raw radiance.
No alignment or scale fitting is applied inside the metrics. LPIPS is a
learned metric and intentionally absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_same_shape
from .image import LinearImage, display_luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float       # dB, +inf for identical inputs
    ssim: float       # in [-1, 1]
    pixel_count: int

    def __post_init__(self):
        if self.psnr < 0 or self.ssim > 1.0 + 1e-12:
            raise ValueError(f"implausible metric values psnr={self.psnr} ssim={self.ssim}")


def psnr(a: LinearImage, b: LinearImage, peak: float) -> float:
    """10*log10(peak^2 / MSE) over all channels; +inf when images match."""
    check_same_shape(a.data, b.data, names=["a", "b"])
    if a.channels != b.channels:
        raise ValueError("channel count mismatch")
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: LinearImage, b: LinearImage, peak: float,
         window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2,
         sigma: float = SSIM_SIGMA, luma_a=None, luma_b=None) -> float:
    """Mean Gaussian-windowed SSIM over luma, valid windows only."""
    check_same_shape(a.data, b.data, names=["a", "b"])
    if a.height < window or a.width < window:
        raise ValueError(f"images must be at least {window}x{window}")
    x = (display_luma(a) * 255.0 if luma_a is None else luma_a).astype(np.float64)
    y = (display_luma(b) * 255.0 if luma_b is None else luma_b).astype(np.float64)

    kernel = _gaussian_window(window, sigma)

    def filt(z):
        full = ndimage.correlate(z, kernel, mode="constant")
        trim = window // 2
        return full[trim:z.shape[0] - trim, trim:z.shape[1] - trim]

    mu_x = filt(x)
    mu_y = filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)
                / ((mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)))
    return float(ssim_map.mean())


def compare(prediction: LinearImage, truth: LinearImage,
            space: str = "display") -> MetricReport:
    """PSNR + SSIM between a prediction and ground truth.

    space="display": metrics on sRGB-encoded luma with peak 255 (default).
    space="linear": metrics on raw radiance with peak = max(truth).
    """
    if space == "display":
        la = display_luma(prediction) * 255.0
        lb = display_luma(truth) * 255.0
        mse = float(np.mean((la - lb) ** 2))
        p = float("inf") if mse == 0.0 else 10.0 * np.log10(255.0 ** 2 / mse)
        s = ssim(prediction, truth, peak=255.0, luma_a=la, luma_b=lb)
    elif space == "linear":
        peak = float(truth.data.max()) or 1.0
        p = psnr(prediction, truth, peak=peak)
        s = ssim(prediction, truth, peak=peak,
                 luma_a=prediction.data.mean(axis=2) if prediction.channels == 3
                 else prediction.data[:, :, 0],
                 luma_b=truth.data.mean(axis=2) if truth.channels == 3
                 else truth.data[:, :, 0])
    else:
        raise ValueError(f"unknown space {space!r}")
    return MetricReport(psnr=p, ssim=s, pixel_count=truth.height * truth.width)
