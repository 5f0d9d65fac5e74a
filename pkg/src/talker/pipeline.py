"""End-to-end pipeline entry points: init, edit, render, eval.

Every command validates its config up front and writes outputs atomically
(temp name, rename on success), so a failed run leaves no partial artifacts.
"""

from __future__ import annotations

import json
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import cameras
from .config import RunConfig
from .data import Dataset, load_dataset
from .field.checkpoint import (
    file_digest,
    load_checkpoint,
    load_module_sections,
    module_sections,
    save_checkpoint,
)
from .field.model import FieldConfig, FieldModel
from .field.render import FastFieldRenderer, MarchConfig
from .field.train import TrainConfig, train_field
from .imaging import encode_png, psnr
from .metrics import (
    UNAVAILABLE,
    clip_direction,
    identity_distance,
    make_embedder,
    make_sync_scorer,
    sync_score,
    warping_error,
)
from .pdu import render_training_frames, run_pdu
from .refine import RefineNet, blend, refine_residual


def _apply_thread_config(config: RunConfig):
    if config.threads is not None:
        torch.set_num_threads(config.threads)


def atomic_write_json(path: Path, payload: dict):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    os.replace(tmp, path)


def atomic_replace_dir(tmp_dir: Path, final_dir: Path):
    if final_dir.exists():
        shutil.rmtree(final_dir)
    os.replace(tmp_dir, final_dir)


def load_dataset_for(config: RunConfig) -> Dataset:
    return load_dataset(config.dataset)


def march_for(config: RunConfig, dataset: Dataset) -> MarchConfig:
    return config.march.build(background=dataset.background)


def build_field(config: RunConfig, dataset: Dataset) -> FieldModel:
    fc = config.field.build()
    if fc.audio_feature_dim != dataset.audio_dim:
        fc = FieldConfig(**{**fc.to_json(), "audio_feature_dim": dataset.audio_dim})
    gen = torch.Generator().manual_seed(config.seed)
    return FieldModel(fc, generator=gen)


def build_refiner(config: RunConfig) -> RefineNet:
    gen = torch.Generator().manual_seed(config.seed + 1)
    return RefineNet(nf=config.train.refine_nf, gc=config.train.refine_gc, generator=gen)


def init_checkpoint_path(config: RunConfig) -> Path:
    return Path(config.output_dir) / "init.trf"


def edited_checkpoint_path(config: RunConfig) -> Path:
    return Path(config.output_dir) / "edited.trf"


@dataclass
class InitResult:
    checkpoint: Path
    digest: str
    test_psnr: float
    loss_curve: list


def cmd_init(config: RunConfig) -> InitResult:
    """Train the original talking field and write the init checkpoint."""
    _apply_thread_config(config)
    dataset = load_dataset_for(config)
    march = march_for(config, dataset)
    field = build_field(config, dataset)
    tcfg = TrainConfig(
        epochs=config.train.init_epochs,
        patch_size=config.train.patch_size,
        lr=config.train.lr_field,
        table_lr_scale=config.train.table_lr_scale,
        seed=config.seed,
        jitter=config.train.jitter,
    )
    report = train_field(field, dataset, march, tcfg)
    renders = render_training_frames(field, dataset.test_frames, march)
    scores = [psnr(r, f.image) for r, f in zip(renders, dataset.test_frames)]
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = init_checkpoint_path(config)
    tmp = ckpt.with_name(ckpt.name + ".tmp")
    save_checkpoint(tmp, module_sections(field, "field"), field.config.to_json(),
                    extra={"phase": "init", "seed": config.seed})
    os.replace(tmp, ckpt)
    atomic_write_json(out / "init_report.json", {
        "loss_curve": report.loss_curve,
        "steps": report.steps,
        "test_psnr": scores,
        "wall_time": report.wall_time,
    })
    return InitResult(ckpt, file_digest(ckpt), float(np.mean(scores)) if scores else float("nan"),
                      report.loss_curve)


def load_field_from_checkpoint(path) -> FieldModel:
    sections, cfg, _ = load_checkpoint(path)
    field = FieldModel(FieldConfig.from_json(cfg))
    load_module_sections(field, sections, "field")
    return field


def load_models_from_checkpoint(path, config: RunConfig):
    """(field, refiner) from a container; a missing refine section yields a
    zero-residual fresh refiner."""
    sections, cfg, _ = load_checkpoint(path)
    field = FieldModel(FieldConfig.from_json(cfg))
    load_module_sections(field, sections, "field")
    refiner = build_refiner(config)
    if any(k.startswith("refine/") for k in sections):
        load_module_sections(refiner, sections, "refine")
    return field, refiner


@dataclass
class EditResult:
    checkpoint: Path
    digest: str
    report_path: Path


def cmd_edit(config: RunConfig, instruction: str | None = None,
             resume: bool = False, progress=None,
             schedule_override=None) -> EditResult:
    """Run the progressive dataset update from the init checkpoint."""
    _apply_thread_config(config)
    dataset = load_dataset_for(config)
    march = march_for(config, dataset)
    init_ckpt = init_checkpoint_path(config)
    field = load_field_from_checkpoint(init_ckpt)
    refiner = build_refiner(config)
    editor = config.editor.build()
    if schedule_override is not None:
        schedule = schedule_override.with_instruction(instruction or config.instruction)
    else:
        schedule = config.schedule.build(instruction or config.instruction)
    profile = config.train.build_profile(
        config.seed, config.editor.parallelism, config.losses.adversarial
    )
    weights = config.losses.build_weights()
    fx = config.losses.build_extractor()
    embedder = make_embedder(config.metrics.image_embedder)
    captions = (config.metrics.caption_pre, config.metrics.caption_post)
    out = Path(config.output_dir)
    report = run_pdu(
        field, refiner, dataset, schedule, editor, march,
        weights=weights, fx=fx, profile=profile,
        out_dir=out / "pdu", resume=resume,
        embedder=embedder, captions=captions, progress=progress,
    )
    ckpt = edited_checkpoint_path(config)
    sections = module_sections(field, "field")
    sections.update(module_sections(refiner, "refine"))
    tmp = ckpt.with_name(ckpt.name + ".tmp")
    save_checkpoint(tmp, sections, field.config.to_json(),
                    extra={"phase": "edited", "seed": config.seed,
                           "instruction": schedule.instruction})
    os.replace(tmp, ckpt)
    report_path = out / "pdu_report.json"
    atomic_write_json(report_path, report.to_json())
    return EditResult(ckpt, file_digest(ckpt), report_path)


def render_track(field: FieldModel, refiner: RefineNet, dataset: Dataset,
                 march: MarchConfig, omega: float = 1.0,
                 yaw_deg: float | None = None,
                 background_override=None,
                 frames=None) -> list[np.ndarray]:
    """Render dataset frames (audio + eye + appearance per frame) at omega."""
    if background_override is not None:
        march = MarchConfig(**{**march.__dict__, "background": tuple(background_override)})
    renderer = FastFieldRenderer(field)
    out = []
    for f in frames if frames is not None else dataset.frames:
        pose = f.pose if yaw_deg is None else cameras.yaw_pose(f.pose, yaw_deg)
        h, w = f.image.shape[:2]
        rays = cameras.patch_rays(pose, f.intrinsics, (0, 0), (h, w))
        res = renderer.render_frame(rays, f.audio_feature, f.eye_feature,
                                    f.appearance_index, march)
        img = res.color
        if omega != 0.0:
            with torch.no_grad():
                img = blend(img, refine_residual(refiner, img), omega)
        out.append(img.numpy().astype(np.float32))
    return out


@dataclass
class RenderResult:
    frames_dir: Path
    count: int


def cmd_render(config: RunConfig, checkpoint=None, omega: float = 1.0,
               yaw_deg: float | None = None, background_override=None) -> RenderResult:
    """Render the dataset track from a checkpoint into output_dir/renders."""
    _apply_thread_config(config)
    if not 0.0 <= omega <= config.service.omega_max:
        raise ValueError(f"omega {omega} outside [0, {config.service.omega_max}]")
    dataset = load_dataset_for(config)
    march = march_for(config, dataset)
    ckpt = Path(checkpoint) if checkpoint else _default_checkpoint(config)
    field, refiner = load_models_from_checkpoint(ckpt, config)
    images = render_track(field, refiner, dataset, march, omega, yaw_deg,
                          background_override)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "renders.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    for f, img in zip(dataset.frames, images):
        (tmp / f"{f.frame_id:06d}.png").write_bytes(encode_png(img))
    final = out / "renders"
    atomic_replace_dir(tmp, final)
    return RenderResult(final, len(images))


def _default_checkpoint(config: RunConfig) -> Path:
    edited = edited_checkpoint_path(config)
    if edited.exists():
        return edited
    init = init_checkpoint_path(config)
    if init.exists():
        return init
    raise FileNotFoundError(f"no checkpoint found under {config.output_dir}")


def cmd_eval(config: RunConfig, checkpoint=None, omega: float = 1.0) -> dict:
    """Metric report over the held-out frames: sync score, directional
    similarity, identity distance, warping error. Written to eval.json."""
    _apply_thread_config(config)
    dataset = load_dataset_for(config)
    march = march_for(config, dataset)
    ckpt = Path(checkpoint) if checkpoint else _default_checkpoint(config)
    field, refiner = load_models_from_checkpoint(ckpt, config)
    test = dataset.test_frames
    post = render_track(field, refiner, dataset, march, omega, frames=test)
    pre = [f.image for f in test]
    embedder = make_embedder(config.metrics.image_embedder)
    scorer = make_sync_scorer(config.metrics.sync_scorer)
    if embedder is not None:
        directions = [
            clip_direction(a, b, config.metrics.caption_pre,
                           config.metrics.caption_post, embedder)
            for a, b in zip(pre, post)
        ]
        clip_dir = float(np.mean([d.value for d in directions]))
        ident = float(np.mean([
            identity_distance(a, b, embedder) for a, b in zip(pre, post)
        ]))
    else:
        clip_dir = None
        ident = None
    warp_err = warping_error(post) if len(post) >= 2 else None
    sync = sync_score(post, np.stack([f.audio_feature for f in test]), scorer)
    report = {
        "sync_score": sync if sync == UNAVAILABLE else float(sync),
        "clip_direction": clip_dir,
        "identity_distance": ident,
        "warping_error": warp_err,
        "checkpoint": str(ckpt),
        "omega": omega,
        "frames": len(test),
    }
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "eval.json", report)
    return report
