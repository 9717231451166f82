"""PSNR and SSIM on (H, W) or (H, W, C) float images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

# SSIM constants (Gaussian window, as commonly used for reporting)
WIN_SIZE = 11
WIN_SIGMA = 1.5
K1 = 0.01
K2 = 0.03


def _as_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[:, :, None] if img.ndim == 2 else img


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); ``math.inf`` for identical images."""
    _check_shapes(a, b)
    mse = np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / mse))


def _gaussian_window() -> np.ndarray:
    r = np.arange(WIN_SIZE) - WIN_SIZE // 2
    g = np.exp(-(r**2) / (2 * WIN_SIGMA**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    y = correlate1d(x, win, axis=0, mode="constant")
    y = correlate1d(y, win, axis=1, mode="constant")
    p = WIN_SIZE // 2
    # keep only positions where the whole window lies inside the image
    return y[p:-p, p:-p]


def _ssim_channel(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    win = _gaussian_window()
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    saa = _filter_valid(a * a, win) - mu_a**2
    sbb = _filter_valid(b * b, win) - mu_b**2
    sab = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_channels(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> list[float]:
    _check_shapes(a, b)
    a, b = _as_hwc(a), _as_hwc(b)
    if min(a.shape[:2]) < WIN_SIZE:
        raise ValueError(f"SSIM needs images of at least {WIN_SIZE}x{WIN_SIZE}, got {a.shape[:2]}")
    return [_ssim_channel(a[..., c], b[..., c], peak) for c in range(a.shape[2])]


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_channels(a, b, peak)))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    per_channel: list[dict] = field(default_factory=list)

    def format(self) -> str:
        p = "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.4f}"
        return f"PSNR {p} dB  SSIM {self.ssim:.6f}"


def evaluate(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> MetricReport:
    a3, b3 = _as_hwc(a), _as_hwc(b)
    _check_shapes(a3, b3)
    chans = ssim_channels(a3, b3, peak)
    per = [
        {"channel": c, "psnr_db": psnr(a3[..., c], b3[..., c], peak), "ssim": s}
        for c, s in enumerate(chans)
    ]
    return MetricReport(psnr(a3, b3, peak), float(np.mean(chans)), per)
