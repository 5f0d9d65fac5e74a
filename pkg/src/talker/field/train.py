"""Photometric training of the radiance field (the init phase).

One epoch draws one random patch per training frame and takes an Adam step on
the MSE between the rendered patch and the frame pixels. Everything stochastic
flows from the config seed, so runs are reproducible bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from ..data import Dataset, FrameRecord, sample_patch
from ..losses import TrainingAbort, reconstruction_loss
from .model import FieldModel
from .render import MarchConfig, render_rays


@dataclass
class TrainConfig:
    epochs: int = 50
    patch_size: int = 32
    lr: float = 5e-4            # Adam on the field networks
    table_lr_scale: float = 10.0  # grid tables learn faster than the MLPs
    betas: tuple = (0.9, 0.99)
    seed: int = 0
    jitter: bool = False


@dataclass
class TrainReport:
    loss_curve: list = dc_field(default_factory=list)  # per-epoch mean loss
    steps: int = 0
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else float("nan")


def field_param_groups(model: FieldModel, lr: float, table_lr_scale: float):
    tables, rest = [], []
    for name, p in model.named_parameters():
        (tables if name.endswith("tables") else rest).append(p)
    return [
        {"params": tables, "lr": lr * table_lr_scale},
        {"params": rest, "lr": lr},
    ]


def make_field_optimizer(model: FieldModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        field_param_groups(model, cfg.lr, cfg.table_lr_scale), betas=cfg.betas, eps=1e-15
    )


def patch_step(model: FieldModel, frame: FrameRecord, patch, march: MarchConfig,
               generator: torch.Generator | None = None):
    """Render the patch rays through the model and return (loss, rendered)."""
    o, d = patch.rays
    color, _, _ = render_rays(
        model.query_points,
        torch.from_numpy(o.reshape(-1, 3)),
        torch.from_numpy(d.reshape(-1, 3)),
        torch.from_numpy(frame.audio_feature),
        frame.eye_feature,
        frame.appearance_index,
        march,
        generator,
    )
    target = torch.from_numpy(patch.pixels.reshape(-1, 3))
    loss = reconstruction_loss(color, target)
    return loss, color


def train_field(model: FieldModel, dataset: Dataset, march: MarchConfig,
                cfg: TrainConfig, frames: list[FrameRecord] | None = None) -> TrainReport:
    """Fit the field to its training frames. `frames` overrides the train split."""
    frames = list(frames if frames is not None else dataset.train_frames)
    if not frames:
        raise ValueError("no frames to train on")
    report = TrainReport()
    if cfg.epochs <= 0:
        return report
    rng = np.random.default_rng(cfg.seed)
    jitter_gen = torch.Generator().manual_seed(cfg.seed + 1) if cfg.jitter else None
    opt = make_field_optimizer(model, cfg)
    t_start = time.time()
    march_train = MarchConfig(**{**march.__dict__, "jitter": cfg.jitter})
    psize = min(cfg.patch_size, dataset.height, dataset.width)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(frames))
        losses = []
        for fi in order:
            frame = frames[fi]
            patch = sample_patch(frame, (psize, psize), "full", rng)
            loss, _ = patch_step(model, frame, patch, march_train, jitter_gen)
            if not torch.isfinite(loss):
                raise TrainingAbort("reconstruction loss became non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        report.loss_curve.append(float(np.mean(losses)))
        report.steps += len(losses)
    report.wall_time = time.time() - t_start
    return report
