"""Procedural clean test images: textures, edges and smooth regions."""

from __future__ import annotations

import numpy as np


def textured_image(size: int, channels: int = 3, seed: int = 0, min_period: float = 4.0,
                   max_period: float = 16.0, n_gratings: int = 4, n_shapes: int = 6) -> np.ndarray:
    """Sum of oriented gratings plus flat-shaded rectangles and discs, in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size, channels))
    for _ in range(n_gratings):
        period = rng.uniform(min_period, max_period)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        img += wave[:, :, None] * rng.uniform(0.3, 1.0, channels)
    img /= n_gratings
    for _ in range(n_shapes):
        color = rng.uniform(-0.5, 0.5, channels)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size, 2)
            h, w = rng.integers(size // 8, size // 2, 2)
            sel = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 10, size / 4)
            sel = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[sel] = img[sel] * 0.5 + color
    lo, hi = img.min(), img.max()
    img = 0.1 + 0.8 * (img - lo) / (hi - lo)
    return img.astype(np.float32)


def checkerboard(size: int, cell: int = 1, channels: int = 3, low: float = 0.2, high: float = 0.8) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    board = np.where(((yy // cell) + (xx // cell)) % 2 == 0, high, low)
    return np.repeat(board[:, :, None], channels, axis=2).astype(np.float32)


def flat_image(size: int, value: float = 0.5, channels: int = 3) -> np.ndarray:
    return np.full((size, size, channels), value, dtype=np.float32)
