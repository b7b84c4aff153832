"""Full-reference quality metrics on [0,1] RGB images: PSNR and SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on the [0,1] scale; identical images give +inf."""
    if a.shape != b.shape:
        raise ContractError(f"shapes differ: {a.shape} vs {b.shape}")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering with a 1D kernel applied on both axes."""
    k = kernel.size
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0)
    x = rows @ kernel  # (H-k+1, W)
    cols = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)
    return cols @ kernel


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of the channel-averaged luminance.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0,
    averaged over fully-valid window positions.
    """
    if a.shape != b.shape:
        raise ContractError(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ContractError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = np.asarray(a, dtype=np.float64).mean(axis=2)
    y = np.asarray(b, dtype=np.float64).mean(axis=2)
    kernel = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)

    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    xx = _filter_valid(x * x, kernel)
    yy = _filter_valid(y * y, kernel)
    xy = _filter_valid(x * y, kernel)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def metric_report(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b))
