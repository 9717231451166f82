"""Self-supervised training with PD stride ``a``, inference with stride ``b``,
and random-replacing refinement (R3).

Images are float32 (H, W, C) arrays in [0, 1]; the network sees (N, C, H, W).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import pd
from .bsn import BsnModel
from .tensor import AdamState, Tensor, adam_step, backward, l1_loss, no_grad, rearrange, zero_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    a: int = 5
    patch_size: int = 120
    batch_size: int = 8
    epochs: int = 20
    lr: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 8
    patches_per_epoch: int = 24000
    rot90: bool = True
    hflip: bool = True
    vflip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.a < 1:
            raise ValueError(f"training stride a must be >= 1, got {self.a}")
        if self.patch_size < self.a:
            raise ValueError("patch_size must be at least the training stride")
        if self.batch_size < 1 or self.epochs < 1 or self.patches_per_epoch < 1:
            raise ValueError("batch_size, epochs and patches_per_epoch must be positive")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    @property
    def iterations_per_epoch(self) -> int:
        return max(1, self.patches_per_epoch // self.batch_size)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class InferConfig:
    b: int = 2
    r3_enabled: bool = True
    p: float = 0.16
    T: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.b < 1:
            raise ValueError(f"inference stride b must be >= 1, got {self.b}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"replacement probability must lie in [0, 1], got {self.p}")
        if self.T < 1:
            raise ValueError(f"R3 needs at least one mask, got T={self.T}")


@dataclass
class LossRecord:
    epoch: int
    iteration: int
    loss: float


@dataclass
class TrainHistory:
    records: list[LossRecord] = field(default_factory=list)

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for r in self.records:
            by_epoch.setdefault(r.epoch, []).append(r.loss)
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "iteration", "loss"])
            for r in self.records:
                wr.writerow([r.epoch, r.iteration, repr(r.loss)])


# ---------------------------------------------------------------------------
# loss


def _to_nchw(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None])


def _to_hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[0].transpose(1, 2, 0))


def pd_bsn(model: BsnModel, x: Tensor, s: int) -> Tensor:
    """PD_s^-1(B(PD_s(x))) with B run on the s*s sub-images as one batch."""
    sub = rearrange(x, lambda v: pd.batch_split(v, s), lambda g: pd.batch_merge(g, s))
    out = model(sub)
    return rearrange(out, lambda v: pd.batch_merge(v, s), lambda g: pd.batch_split(g, s))


def apbsn_loss(model: BsnModel, patch: Tensor | np.ndarray, a: int) -> Tensor:
    """Mean L1 between the PD_a-BSN reconstruction and the noisy patch itself."""
    if not isinstance(patch, Tensor):
        patch = Tensor(patch)
    h, w = patch.shape[2:]
    if h % a or w % a:
        raise ValueError(f"patch size {h}x{w} is not divisible by training stride {a}")
    return l1_loss(pd_bsn(model, patch, a), patch)


# ---------------------------------------------------------------------------
# training


def _augment(patch: np.ndarray, rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    # draws are made unconditionally so toggling one flag leaves the others' stream intact
    k = int(rng.integers(4))
    hf, vf = rng.random() < 0.5, rng.random() < 0.5
    if cfg.rot90 and k:
        patch = np.rot90(patch, k, axes=(0, 1))
    if cfg.hflip and hf:
        patch = patch[:, ::-1]
    if cfg.vflip and vf:
        patch = patch[::-1]
    return patch


def sample_batch(dataset: list[np.ndarray], cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Random crops (uniform, with replacement) as an (N, C, P, P) batch."""
    ps = cfg.patch_size
    crops = []
    for _ in range(cfg.batch_size):
        img = dataset[int(rng.integers(len(dataset)))]
        y = int(rng.integers(img.shape[0] - ps + 1))
        x = int(rng.integers(img.shape[1] - ps + 1))
        crops.append(_augment(img[y : y + ps, x : x + ps], rng, cfg))
    batch = np.stack(crops).astype(np.float32)
    if batch.ndim == 3:
        batch = batch[..., None]
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2))


def train(
    model: BsnModel,
    dataset: list[np.ndarray],
    cfg: TrainConfig,
    progress=None,
) -> tuple[BsnModel, TrainHistory]:
    """Train ``model`` in place on noisy images only.

    ``progress`` is an optional callable receiving each :class:`LossRecord`.
    """
    if not dataset:
        raise ValueError("training needs at least one noisy image")
    ps = cfg.patch_size
    if ps % cfg.a:
        # crops are cut at the next smaller multiple so PD_a stays exact
        ps = ps - ps % cfg.a
        cfg = TrainConfig(**{**asdict(cfg), "patch_size": ps})
    for i, img in enumerate(dataset):
        if img.shape[0] < ps or img.shape[1] < ps:
            raise ValueError(f"image {i} of size {img.shape[:2]} is smaller than patch {ps}")
        if (img.shape[2] if img.ndim == 3 else 1) != model.config.in_channels:
            raise ValueError(f"image {i} channel count does not match the model")

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    history = TrainHistory()
    it = 0
    for epoch in range(cfg.epochs):
        state.lr = cfg.lr_at(epoch)
        for _ in range(cfg.iterations_per_epoch):
            batch = sample_batch(dataset, cfg, rng)
            zero_grad(params)
            loss = apbsn_loss(model, Tensor(batch), cfg.a)
            backward(loss)
            adam_step(params, state)
            rec = LossRecord(epoch, it, loss.item())
            history.records.append(rec)
            if progress is not None:
                progress(rec)
            it += 1
        log.info("epoch %d  lr %.2e  mean loss %.6f", epoch, state.lr, history.epoch_means()[-1])
    return model, history


# ---------------------------------------------------------------------------
# inference


def _forward_image(model: BsnModel, img: np.ndarray) -> np.ndarray:
    with no_grad():
        return _to_hwc(model(Tensor(_to_nchw(img))).data)


def infer(model: BsnModel, noisy: np.ndarray, b: int) -> np.ndarray:
    """PD_b -> BSN on the sub-images -> PD_b^-1, any input size."""
    squeeze = noisy.ndim == 2
    padded, (h, w) = pd.reflect_pad_to_multiple(np.asarray(noisy, np.float32), b)
    x = _to_nchw(padded)
    with no_grad():
        out = model(Tensor(pd.batch_split(x, b))).data
    out = _to_hwc(pd.batch_merge(out, b))[:h, :w]
    return out[..., 0] if squeeze else out


def r3_masks(shape: tuple[int, int], cfg: InferConfig) -> np.ndarray:
    """T independent Bernoulli(p) masks of shape (H, W), shared across channels."""
    rng = np.random.default_rng(cfg.seed)
    return rng.random((cfg.T,) + tuple(shape)) < cfg.p


def r3_refine(model: BsnModel, noisy: np.ndarray, i_bsn: np.ndarray, cfg: InferConfig) -> np.ndarray:
    """Average of B(M_i * noisy + (1 - M_i) * i_bsn) over T random masks, no PD."""
    if cfg.T < 1:
        raise ValueError("R3 needs T >= 1")
    if noisy.shape != i_bsn.shape:
        raise ValueError(f"shape mismatch: {noisy.shape} vs {i_bsn.shape}")
    masks = r3_masks(noisy.shape[:2], cfg)
    acc = np.zeros(noisy.shape, dtype=np.float64)
    for m in masks:
        if noisy.ndim == 3:
            m = m[:, :, None]
        acc += _forward_image(model, np.where(m, noisy, i_bsn)).reshape(noisy.shape)
    return (acc / cfg.T).astype(np.float32)


def denoise(model: BsnModel, noisy: np.ndarray, cfg: InferConfig) -> np.ndarray:
    """AP-BSN inference with stride ``cfg.b`` plus optional R3, clipped to [0, 1]."""
    out = infer(model, noisy, cfg.b)
    if cfg.r3_enabled:
        out = r3_refine(model, np.asarray(noisy, np.float32), out, cfg)
    return np.clip(out, 0.0, 1.0)
