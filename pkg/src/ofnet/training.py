"""Mini-batch training loop with CSV loss logging and periodic checkpoints."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autograd import OptimState, backward, optimizer_step
from .exceptions import ConfigurationError, NumericError
from .loss import LossConfig, training_loss
from .model import OFNet
from .synth import OcclusionSample, random_crop

LOG_HEADER = ("step", "edge_loss", "orientation_loss", "total_loss")


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 1000
    batch_size: int = 2
    crop: int = 96
    learning_rate: float = 2e-3
    min_learning_rate: float = 1e-4
    schedule: str = "cosine"
    warmup: int = 20
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    flips: bool = False
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.iters < 0:
            raise ConfigurationError(f"iters must be >= 0, got {self.iters}")
        if self.batch_size < 1 or self.crop < 1:
            raise ConfigurationError("batch_size and crop must be >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.learning_rate <= 0 or self.min_learning_rate < 0:
            raise ConfigurationError("learning rates must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, step: int) -> float:
        if self.warmup and step < self.warmup:
            return self.learning_rate * (step + 1) / self.warmup
        if self.schedule == "constant" or self.iters <= 1:
            return self.learning_rate
        frac = min(1.0, (step - self.warmup) / max(1, self.iters - self.warmup - 1))
        return self.min_learning_rate + 0.5 * (self.learning_rate - self.min_learning_rate) * (1 + math.cos(math.pi * frac))


def flip_sample(sample: OcclusionSample, horizontal: bool, vertical: bool) -> OcclusionSample:
    """Mirror a sample, remapping orientations so the nearer side stays on
    ``n_fg``: a left-right mirror maps theta to -theta, an up-down mirror to
    pi - theta."""
    img, edge, ori = sample.image, sample.edge, sample.orientation.astype(np.float64)
    labels = sample.labels
    if horizontal:
        img, edge, ori = img[:, ::-1], edge[:, ::-1], -ori[:, ::-1]
        labels = None if labels is None else labels[:, ::-1]
    if vertical:
        img, edge, ori = img[::-1], edge[::-1], np.pi - ori[::-1]
        labels = None if labels is None else labels[::-1]
    ori = np.pi - np.mod(np.pi - ori, 2 * np.pi)
    ori = np.where(edge > 0, ori, 0.0).astype(np.float32)
    return OcclusionSample(
        np.ascontiguousarray(img),
        np.ascontiguousarray(edge),
        np.ascontiguousarray(ori),
        None if labels is None else np.ascontiguousarray(labels),
        sample.sample_id,
    )


def make_batch(samples, cfg: TrainConfig, rng: np.random.Generator, stride: int):
    """Random batch: images (N,3,h,w), edges (N,1,h,w), orientations (N,1,h,w)."""
    h, w = samples[0].shape
    ch = min(cfg.crop, h) // stride * stride
    cw = min(cfg.crop, w) // stride * stride
    if ch < stride or cw < stride:
        raise ConfigurationError(f"crop {cfg.crop} is smaller than the backbone stride {stride}")
    idx = rng.choice(len(samples), size=cfg.batch_size, replace=len(samples) < cfg.batch_size)
    imgs, edges, oris = [], [], []
    for i in idx:
        s = samples[int(i)]
        if (ch, cw) != s.shape:
            s = random_crop(s, (ch, cw), rng)
        if cfg.flips:
            hf, vf = rng.integers(0, 2, size=2)
            s = flip_sample(s, bool(hf), bool(vf))
        imgs.append(s.image.transpose(2, 0, 1))
        edges.append(s.edge[None])
        oris.append(s.orientation[None])
    return (
        np.ascontiguousarray(np.stack(imgs), dtype=np.float32),
        np.stack(edges).astype(np.float32),
        np.stack(oris).astype(np.float32),
    )


class LossLog:
    """Appends (step, edge, orientation, total) rows to a CSV file."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self.rows: list[tuple] = []
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_HEADER)

    def append(self, step, edge, ori, total):
        row = (int(step), float(edge), float(ori), float(total))
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[0]] + [repr(v) for v in row[1:]])


def train_step(model: OFNet, batch, loss_cfg: LossConfig, state: OptimState):
    images, edges, oris = batch
    logits, ori = model.forward_train(images)
    total, al, sl = training_loss(logits, edges, ori, oris, loss_cfg)
    values = (float(al.data), float(sl.data), float(total.data))
    if not all(math.isfinite(v) for v in values):
        raise NumericError(f"non-finite loss (edge={values[0]}, orientation={values[1]})")
    params = model.parameters()
    grads = backward(total, params)
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
    optimizer_step(params, grads, state)
    return values


def train(
    model: OFNet,
    samples,
    cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig = LossConfig(),
    log_path=None,
    checkpoint_dir=None,
    callback=None,
) -> LossLog:
    """Run ``cfg.iters`` optimizer steps on random crops of ``samples``.

    A checkpoint is written before the first step and, if
    ``checkpoint_every`` is set, every that many steps.  When at least one
    step ran, the last state is also written as ``final.ofnt``.
    """
    from .model import save_checkpoint

    samples = list(samples)
    if not samples:
        raise ConfigurationError("training needs at least one sample")
    rng = np.random.default_rng(cfg.seed)
    state = OptimState(
        learning_rate=cfg.learning_rate,
        method=cfg.optimizer,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    log = LossLog(log_path)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, ckpt_dir / f"step{model.step:06d}.ofnt")
    stride = model.variant.backbone.stride
    start = model.step
    for it in range(cfg.iters):
        state.learning_rate = cfg.lr_at(it)
        batch = make_batch(samples, cfg, rng, stride)
        try:
            edge, ori, total = train_step(model, batch, loss_cfg, state)
        except NumericError as exc:
            raise NumericError(f"training aborted at step {model.step}: {exc}") from None
        model.step += 1
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iters - 1):
            log.append(model.step, edge, ori, total)
        if callback is not None:
            callback(model, it, (edge, ori, total))
        if ckpt_dir is not None and cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0:
            save_checkpoint(model, ckpt_dir / f"step{model.step:06d}.ofnt")
    if ckpt_dir is not None and model.step != start:
        save_checkpoint(model, ckpt_dir / f"step{model.step:06d}.ofnt")
        save_checkpoint(model, ckpt_dir / "final.ofnt")
    return log
