"""Pixel-shuffle downsampling (PD) and its inverse.

``pd_forward`` splits an image into s*s phase sub-images, the sub-image of
phase (qi, qj) holding pixels ``I[y*s + qi, x*s + qj]``, and tiles them into
a mosaic of the original size with phase (qi, qj) at block (qi, qj).
Images are (H, W) or (H, W, C) arrays; batched helpers work on (N, C, H, W).
"""

from __future__ import annotations

import numpy as np


def _check(h: int, w: int, s: int):
    if not isinstance(s, (int, np.integer)) or s < 1:
        raise ValueError(f"PD stride must be a positive integer, got {s!r}")
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} is not divisible by PD stride {s}")


def pd_forward(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    _check(h, w, s)
    rest = img.shape[2:]
    x = img.reshape(h // s, s, w // s, s, *rest)
    x = np.moveaxis(x, (1, 3), (0, 2))  # (s, h/s, s, w/s, ...)
    return np.ascontiguousarray(x).reshape(img.shape)


def pd_inverse(mosaic: np.ndarray, s: int) -> np.ndarray:
    h, w = mosaic.shape[:2]
    _check(h, w, s)
    rest = mosaic.shape[2:]
    x = mosaic.reshape(s, h // s, s, w // s, *rest)
    x = np.moveaxis(x, (0, 2), (1, 3))
    return np.ascontiguousarray(x).reshape(mosaic.shape)


def pd_split(img: np.ndarray, s: int) -> list[np.ndarray]:
    """Sub-images ordered by phase (qi, qj), row-major."""
    h, w = img.shape[:2]
    _check(h, w, s)
    return [img[qi::s, qj::s].copy() for qi in range(s) for qj in range(s)]


def pd_merge(subs: list[np.ndarray], s: int) -> np.ndarray:
    """Inverse of :func:`pd_split`."""
    if len(subs) != s * s:
        raise ValueError(f"expected {s * s} sub-images, got {len(subs)}")
    hs, ws = subs[0].shape[:2]
    out = np.empty((hs * s, ws * s) + subs[0].shape[2:], dtype=subs[0].dtype)
    for i, sub in enumerate(subs):
        out[i // s :: s, i % s :: s] = sub
    return out


# -- batched (N, C, H, W) forms used by the training and inference pipeline


def batch_split(x: np.ndarray, s: int) -> np.ndarray:
    """(N, C, H, W) -> (N*s*s, C, H/s, W/s); sub-image index n*s*s + qi*s + qj."""
    n, c, h, w = x.shape
    _check(h, w, s)
    y = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 3, 5, 1, 2, 4)
    return np.ascontiguousarray(y).reshape(n * s * s, c, h // s, w // s)


def batch_merge(x: np.ndarray, s: int) -> np.ndarray:
    """Inverse of :func:`batch_split`."""
    ns, c, hs, ws = x.shape
    if s < 1 or ns % (s * s):
        raise ValueError(f"batch of {ns} sub-images cannot be merged with stride {s}")
    n = ns // (s * s)
    y = x.reshape(n, s, s, c, hs, ws).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(y).reshape(n, c, hs * s, ws * s)


def reflect_pad_to_multiple(img: np.ndarray, s: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the two leading axes up to a multiple of ``s``.

    Returns the padded image and the original (H, W) for cropping back.
    """
    h, w = img.shape[:2]
    ph, pw = (-h) % s, (-w) % s
    if ph == 0 and pw == 0:
        return img, (h, w)
    # reflect needs pad < size; fall back to symmetric for tiny images
    mode = "reflect" if ph < h and pw < w else "symmetric"
    widths = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, widths, mode=mode), (h, w)
