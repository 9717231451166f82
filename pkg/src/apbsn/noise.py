"""Synthetic noise with controllable spatial correlation, and its analysis.

Correlated noise is white Gaussian noise filtered by a small kernel with unit
L2 norm, so the marginal standard deviation stays ``sigma`` while neighbouring
samples share taps. The correlation between offsets (dx, dy) is then the
kernel autocorrelation at that lag.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

MAX_KERNEL = 7


def tent_kernel() -> np.ndarray:
    """3x3 bilinear-interpolation kernel with unit L2 norm."""
    k = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0])
    return k / np.linalg.norm(k)


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / size)


def kernel_from_name(spec) -> np.ndarray | None:
    """Resolve "white", "tent", "boxN" or an explicit list of rows (normalised)."""
    if spec is None or spec == "white":
        return None
    if isinstance(spec, str):
        if spec == "tent":
            return tent_kernel()
        if spec.startswith("box") and spec[3:].isdigit():
            return box_kernel(int(spec[3:]))
        raise ValueError(f"unknown noise kernel {spec!r}")
    k = np.asarray(spec, dtype=np.float64)
    return k / np.linalg.norm(k)


def kernel_autocorrelation(kernel: np.ndarray, dx: int, dy: int) -> float:
    """sum_{u,v} k(u, v) k(u + dy, v + dx) for a unit-norm kernel."""
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    if abs(dy) >= kh or abs(dx) >= kw:
        return 0.0
    a = k[max(0, -dy) : kh - max(0, dy), max(0, -dx) : kw - max(0, dx)]
    b = k[max(0, dy) : kh - max(0, -dy), max(0, dx) : kw - max(0, -dx)]
    return float((a * b).sum())


@dataclass
class NoiseSpec:
    sigma: float = 0.1
    kernel: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != 2 or max(k.shape) > MAX_KERNEL:
                raise ValueError(f"kernel must be 2-D with support <= {MAX_KERNEL}, got {k.shape}")
            norm = np.linalg.norm(k)
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"kernel must have unit L2 norm, got {norm:.6g}")
            self.kernel = k


def gen_noise(shape: tuple[int, ...], spec: NoiseSpec) -> np.ndarray:
    """Zero-mean Gaussian noise field of ``shape`` (H, W) or (H, W, C), float32.

    Channels are filtered independently; the filter is applied with reflect
    padding so the output keeps ``shape``.
    """
    rng = np.random.default_rng(spec.seed)
    white = rng.standard_normal(shape)
    if spec.kernel is None:
        field_ = white
    else:
        weights = spec.kernel.reshape(spec.kernel.shape + (1,) * (len(shape) - 2))
        field_ = ndimage.correlate(white, weights, mode="reflect")
    return (spec.sigma * field_).astype(np.float32)


def add_noise(clean: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """clean + noise, unclipped so that the noise stays zero-mean."""
    return (clean + gen_noise(clean.shape, spec)).astype(np.float32)


# ---------------------------------------------------------------------------
# correlation analysis


@dataclass
class CorrelationProfile:
    """Pearson correlation of a residual with its shifted copy.

    ``rho[(dx, dy)]`` pairs pixel (y, x) with (y + dy, x + dx); dx is the
    horizontal offset.
    """

    rho: dict[tuple[int, int], float]
    sample_count: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def offsets(self) -> list[tuple[int, int]]:
        return sorted(self.rho)

    def __getitem__(self, offset: tuple[int, int]) -> float:
        return self.rho[tuple(offset)]

    def by_distance(self) -> dict[int, float]:
        """Mean rho over offsets at each Chebyshev distance max(|dx|, |dy|)."""
        acc: dict[int, list[float]] = {}
        for (dx, dy), r in self.rho.items():
            acc.setdefault(max(abs(dx), abs(dy)), []).append(r)
        return {d: float(np.mean(v)) for d, v in sorted(acc.items())}

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["dx", "dy", "rho", "n"])
            for dx, dy in self.offsets:
                wr.writerow([dx, dy, repr(float(self.rho[dx, dy])), self.sample_count.get((dx, dy), 0)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "CorrelationProfile":
        rho, n = {}, {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (int(row["dx"]), int(row["dy"]))
                rho[key] = float(row["rho"])
                n[key] = int(row["n"])
        return cls(rho, n)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum()) * np.sqrt((b * b).sum())
    return float((a * b).sum() / denom)


def shifted_pairs(r: np.ndarray, dx: int, dy: int) -> tuple[np.ndarray, np.ndarray]:
    """Views of ``r`` at (y, x) and (y + dy, x + dx) over the valid overlap."""
    h, w = r.shape[:2]
    ys, xs = slice(max(0, -dy), h - max(0, dy)), slice(max(0, -dx), w - max(0, dx))
    yt, xt = slice(max(0, dy), h - max(0, -dy)), slice(max(0, dx), w - max(0, -dx))
    return r[ys, xs], r[yt, xt]


def residual_correlation(residual: np.ndarray, max_offset: int) -> CorrelationProfile:
    r = np.asarray(residual, dtype=np.float64)
    if r.ndim == 2:
        r = r[:, :, None]
    for ch in range(r.shape[2]):
        if np.var(r[:, :, ch]) == 0:
            raise ValueError("residual has zero variance; correlation is undefined")
    h, w = r.shape[:2]
    if max_offset >= min(h, w):
        raise ValueError(f"max_offset {max_offset} too large for a {h}x{w} image")
    rho: dict[tuple[int, int], float] = {}
    count: dict[tuple[int, int], int] = {}
    for dy in range(0, max_offset + 1):
        for dx in range(-max_offset, max_offset + 1):
            if dy == 0 and dx < 0:
                continue
            a, b = shifted_pairs(r, dx, dy)
            val = float(np.mean([_pearson(a[..., c], b[..., c]) for c in range(r.shape[2])]))
            # (-dx, -dy) uses exactly the same pixel pairs
            rho[dx, dy] = rho[-dx, -dy] = val
            count[dx, dy] = count[-dx, -dy] = a.shape[0] * a.shape[1]
    rho[0, 0] = 1.0
    return CorrelationProfile(rho, count)


def correlation_profile(noisy: np.ndarray, clean: np.ndarray, max_offset: int = 6) -> CorrelationProfile:
    """Correlation profile of the residual ``noisy - clean``."""
    if noisy.shape != clean.shape:
        raise ValueError(f"shape mismatch: {noisy.shape} vs {clean.shape}")
    return residual_correlation(np.asarray(noisy, np.float64) - clean, max_offset)


def analytic_profile(kernel: np.ndarray | None, max_offset: int = 6) -> CorrelationProfile:
    """Exact correlation of kernel-filtered white noise (ignoring borders)."""
    rho = {}
    for dy in range(-max_offset, max_offset + 1):
        for dx in range(-max_offset, max_offset + 1):
            if kernel is None:
                rho[dx, dy] = 1.0 if dx == dy == 0 else 0.0
            else:
                rho[dx, dy] = kernel_autocorrelation(kernel, dx, dy)
    return CorrelationProfile(rho)


def replaced_correlation_factor(profile: CorrelationProfile, p: float) -> CorrelationProfile:
    """Predicted correlation after random replacement with probability ``p``.

    A replaced pixel's neighbour is itself an original noisy pixel with
    probability p, otherwise a denoised one carrying no shared noise, so every
    off-centre correlation is scaled by p.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rho = {k: (v if k == (0, 0) else p * v) for k, v in profile.rho.items()}
    return CorrelationProfile(rho, dict(profile.sample_count))


def replaced_neighbor_correlation(
    noise: np.ndarray, mask: np.ndarray, offset: tuple[int, int], residual: np.ndarray | None = None
) -> float:
    """Correlation between a replaced pixel's noise and its neighbour's.

    The mixed field is ``mask * noise + (1 - mask) * residual``. The statistic
    averages noise(x) * mixed(x + offset) over replaced pixels x and
    normalises by the raw noise power, which estimates p * rho(offset).
    """
    noise = np.asarray(noise, np.float64)
    m = np.asarray(mask, bool)
    if residual is None:
        residual = np.zeros_like(noise)
    if noise.ndim == 3:
        m3 = m[:, :, None]
    else:
        m3 = m
    mixed = np.where(m3, noise, residual)
    dx, dy = offset
    n_src, _ = shifted_pairs(noise, dx, dy)
    _, mixed_dst = shifted_pairs(mixed, dx, dy)
    m_src, _ = shifted_pairs(m, dx, dy)
    sel = n_src[m_src]
    if sel.size == 0:
        raise ValueError("mask selects no pixels")
    num = (sel * mixed_dst[m_src]).mean()
    return float(num / (noise * noise).mean())
