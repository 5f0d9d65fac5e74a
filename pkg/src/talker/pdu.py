"""Progressive dataset update: K rounds of render-all -> edit-all -> optimize,
then a lip-patch fine-tune pass.

Rounds are synchronous barriers. After round k the model, refiner,
discriminator, and optimizer moments are checkpointed, so an interrupted run
resumes at the next round boundary and reproduces the uninterrupted result
(per-round RNG is reseeded from (seed, round), never carried across rounds).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset, FrameRecord, sample_patch, select_training_subset
from .editor import EditBatchError, EditRequest, edit_batch
from .field.checkpoint import (
    load_checkpoint,
    load_module_sections,
    load_optimizer_sections,
    module_sections,
    optimizer_sections,
    save_checkpoint,
)
from .field.model import FieldModel
from .field.render import FastFieldRenderer, MarchConfig, render_rays
from .field.train import field_param_groups
from .losses import (
    AdversarialTrainer,
    LossWeights,
    ToyFeatureExtractor,
    finetune_loss,
    total_loss,
)
from .metrics import clip_direction
from .refine import RefineNet, blend_unclamped, refine_residual


class PduAbort(RuntimeError):
    """Editing failed beyond the retry budget; state is resumable."""

    def __init__(self, message: str, resumable_round: int):
        super().__init__(message)
        self.resumable_round = resumable_round


@dataclass(frozen=True)
class PduSchedule:
    rounds: tuple            # ((s_0, t_0), ..., (s_{K-1}, t_{K-1}))
    epochs_per_round: int    # D
    instruction: str = ""
    subset_size: int = 200   # N

    def __post_init__(self):
        if len(self.rounds) < 1:
            raise ValueError("schedule needs at least one round")
        if self.epochs_per_round < 1:
            raise ValueError("epochs_per_round must be >= 1")
        s = [r[0] for r in self.rounds]
        t = [r[1] for r in self.rounds]
        if any(b < a for a, b in zip(s, s[1:])):
            raise ValueError(f"text guidance must be non-decreasing, got {s}")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError(f"diffusion steps must be non-decreasing, got {t}")

    @property
    def k(self) -> int:
        return len(self.rounds)

    def with_instruction(self, instruction: str, subset_size: int | None = None):
        return PduSchedule(self.rounds, self.epochs_per_round, instruction,
                           subset_size or self.subset_size)

    def to_json(self) -> dict:
        return {
            "rounds": [list(r) for r in self.rounds],
            "epochs_per_round": self.epochs_per_round,
            "instruction": self.instruction,
            "subset_size": self.subset_size,
        }

    @staticmethod
    def from_json(d: dict) -> "PduSchedule":
        return PduSchedule(
            tuple((float(s), int(t)) for s, t in d["rounds"]),
            int(d["epochs_per_round"]),
            d.get("instruction", ""),
            int(d.get("subset_size", 200)),
        )


# documented defaults; K * D == 300 epochs matches the published budget
SCHEDULE_PRESETS = {
    "standard": (((3.0, 10), (4.5, 14), (6.0, 17), (7.5, 20)), 75),
    "gentle": (((1.5, 10), (2.25, 14), (3.0, 17), (3.75, 20)), 75),
    "aggressive": (((4.5, 12), (6.75, 16), (9.0, 20), (11.25, 24)), 75),
}


def make_default_schedule(preset: str = "standard") -> PduSchedule:
    if preset not in SCHEDULE_PRESETS:
        raise ValueError(f"unknown preset {preset!r}; have {sorted(SCHEDULE_PRESETS)}")
    rounds, d = SCHEDULE_PRESETS[preset]
    return PduSchedule(rounds, d)


@dataclass
class PduProfile:
    """Training knobs around the schedule (published defaults)."""

    patch_size: int = 256
    lip_patch_size: int = 64
    finetune_epochs: int = 100
    lr_field: float = 5e-4
    lr_refine: float = 2e-4
    table_lr_scale: float = 10.0
    disc_lr: float = 2e-4
    omega_train: float = 1.0
    image_guidance: float = 1.5
    parallel_edits: int = 4
    adversarial: bool = True
    seed: int = 0


@dataclass
class RoundReport:
    round_index: int
    text_guidance: float
    steps: int
    mean_loss: float
    edit_digests: dict
    wall_time: float
    clip_direction: float | None = None

    def to_json(self) -> dict:
        return {
            "round": self.round_index,
            "s": self.text_guidance,
            "t": self.steps,
            "mean_loss": self.mean_loss,
            "edit_digests": self.edit_digests,
            "wall_time": self.wall_time,
            "clip_direction": self.clip_direction,
        }


@dataclass
class PduReport:
    rounds: list = dc_field(default_factory=list)
    finetune_mean_loss: float | None = None
    finetune_epochs: int = 0
    total_epochs: int = 0

    def to_json(self) -> dict:
        return {
            "rounds": [r.to_json() for r in self.rounds],
            "finetune_mean_loss": self.finetune_mean_loss,
            "finetune_epochs": self.finetune_epochs,
            "total_epochs": self.total_epochs,
        }


def derive_seed(base: int, *parts) -> int:
    blob = json.dumps([base, *parts]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little") % (2**31)


def image_digest(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img, dtype=np.float32).tobytes()).hexdigest()


def render_training_frames(field: FieldModel, frames: list[FrameRecord],
                           march: MarchConfig, exact: bool = False) -> list[np.ndarray]:
    """Full-frame renders from a parameter snapshot, frame order.

    exact=True routes through the differentiable reference path (no_grad):
    supervision images must match training-time patch renders bit for bit,
    otherwise the residual shows up as a persistent pseudo-gradient that
    scale-invariant Adam amplifies to full-size steps, and an identity edit
    drifts instead of freezing.
    """
    from . import cameras
    from .field.render import render_patch

    if not frames:
        return []
    renderer = None if exact else FastFieldRenderer(field)
    out = []
    for f in frames:
        h, w = f.image.shape[:2]
        rays = cameras.patch_rays(f.pose, f.intrinsics, (0, 0), (h, w))
        if exact:
            with torch.no_grad():
                res = render_patch(field.query_points, rays,
                                   torch.from_numpy(f.audio_feature),
                                   f.eye_feature, f.appearance_index, march)
        else:
            res = renderer.render_frame(rays, f.audio_feature, f.eye_feature,
                                        f.appearance_index, march)
        out.append(res.color.numpy().astype(np.float32))
    return out


class _PduTrainer:
    """Owns the models and optimizers for one PDU run."""

    def __init__(self, field: FieldModel, refiner: RefineNet, profile: PduProfile,
                 weights: LossWeights, fx):
        self.field = field
        self.refiner = refiner
        self.profile = profile
        self.weights = weights
        self.fx = fx
        groups = field_param_groups(field, profile.lr_field, profile.table_lr_scale)
        groups.append({"params": list(refiner.parameters()), "lr": profile.lr_refine})
        self.opt = torch.optim.Adam(groups, betas=(0.9, 0.99), eps=1e-15)
        gen = torch.Generator().manual_seed(derive_seed(profile.seed, "disc"))
        self.adv = AdversarialTrainer(lr=profile.disc_lr, generator=gen) if profile.adversarial else None

    def train_epochs(self, frames, supervision, march, epochs, rng, patch_size,
                     finetune_originals=None):
        """supervision: frame_id -> edited image. finetune_originals: when set,
        epochs run on lip patches with the fine-tune objective."""
        losses = []
        psize = min(patch_size, frames[0].image.shape[0], frames[0].image.shape[1])
        region = "lip" if finetune_originals is not None else "full"
        for _ in range(epochs):
            order = rng.permutation(len(frames))
            for fi in order:
                frame = frames[fi]
                patch = sample_patch(frame, (psize, psize), region, rng)
                r0, c0 = patch.origin
                edited = supervision[frame.frame_id][r0:r0 + psize, c0:c0 + psize]
                o, d = patch.rays
                color, _, _ = render_rays(
                    self.field.query_points,
                    torch.from_numpy(o.reshape(-1, 3)),
                    torch.from_numpy(d.reshape(-1, 3)),
                    torch.from_numpy(frame.audio_feature),
                    frame.eye_feature,
                    frame.appearance_index,
                    march,
                )
                rendered = color.reshape(psize, psize, 3)
                residual = refine_residual(self.refiner, rendered)
                refined = blend_unclamped(rendered, residual, self.profile.omega_train)
                edited_t = torch.from_numpy(np.ascontiguousarray(edited))
                if finetune_originals is None:
                    breakdown = total_loss(rendered, refined, edited_t,
                                           self.weights, self.fx, self.adv)
                else:
                    breakdown = finetune_loss(
                        rendered, refined, edited_t,
                        torch.from_numpy(np.ascontiguousarray(patch.pixels)),
                        torch.from_numpy(patch.mask_crop.astype(np.float32)),
                        self.weights, self.fx, self.adv,
                    )
                self.opt.zero_grad()
                breakdown.total.backward()
                self.opt.step()
                losses.append(float(breakdown.total.detach()))
        return float(np.mean(losses)) if losses else float("nan")

    def sections(self) -> dict:
        out = module_sections(self.field, "field")
        out.update(module_sections(self.refiner, "refine"))
        out.update(optimizer_sections(self.opt, "opt_field"))
        if self.adv is not None:
            out.update(module_sections(self.adv.disc, "disc"))
            out.update(optimizer_sections(self.adv.opt, "opt_disc"))
        return out

    def load_sections(self, sections: dict):
        load_module_sections(self.field, sections, "field")
        load_module_sections(self.refiner, sections, "refine")
        load_optimizer_sections(self.opt, sections, "opt_field")
        if self.adv is not None and any(k.startswith("disc/") for k in sections):
            load_module_sections(self.adv.disc, sections, "disc")
            load_optimizer_sections(self.adv.opt, sections, "opt_disc")


def run_pdu(field: FieldModel, refiner: RefineNet, dataset: Dataset,
            schedule: PduSchedule, editor, march: MarchConfig,
            weights: LossWeights | None = None, fx=None,
            profile: PduProfile | None = None, out_dir=None, resume: bool = False,
            embedder=None, captions: tuple | None = None,
            progress=None) -> PduReport:
    """The K-round loop plus fine-tune. `progress` is an optional callback
    progress(phase: str, info: dict) used by the service layer."""
    weights = weights or LossWeights()
    profile = profile or PduProfile()
    fx = fx or ToyFeatureExtractor(seed=derive_seed(profile.seed, "fx"))
    notify = progress or (lambda phase, info: None)
    n = min(schedule.subset_size, len(dataset.train_frames))
    frames = select_training_subset(dataset, n, profile.seed)
    trainer = _PduTrainer(field, refiner, profile, weights, fx)
    report = PduReport()
    out_path = Path(out_dir) if out_dir is not None else None
    start_round = 0
    if resume:
        if out_path is None:
            raise ValueError("resume requires an output directory")
        start_round, report = _load_resume_state(out_path, trainer, report)

    for k in range(start_round, schedule.k):
        s_k, t_k = schedule.rounds[k]
        t_start = time.time()
        notify("rendering", {"round": k, "k_total": schedule.k})
        renders = render_training_frames(field, frames, march, exact=True)
        notify("editing", {"round": k, "s": s_k, "t": t_k})
        requests = [
            EditRequest(
                image=img,
                instruction=schedule.instruction,
                text_guidance=s_k,
                image_guidance=profile.image_guidance,
                steps=t_k,
                seed=derive_seed(profile.seed, k, f.frame_id),
            )
            for f, img in zip(frames, renders)
        ]
        try:
            edited = edit_batch(editor, requests, profile.parallel_edits)
        except EditBatchError as exc:
            # the last completed round's checkpoint is already on disk, so the
            # run resumes at this round boundary
            raise PduAbort(f"round {k}: {exc}", resumable_round=k) from exc
        supervision = {f.frame_id: e.image for f, e in zip(frames, edited)}
        digests = {str(f.frame_id): image_digest(e.image) for f, e in zip(frames, edited)}
        notify("training", {"round": k, "epochs": schedule.epochs_per_round})
        rng = np.random.default_rng(derive_seed(profile.seed, "round", k))
        mean_loss = trainer.train_epochs(
            frames, supervision, march, schedule.epochs_per_round, rng,
            profile.patch_size,
        )
        notify("training", {"round": k, "mean_loss": mean_loss,
                            "field": field, "refiner": refiner})
        entry = RoundReport(
            round_index=k, text_guidance=s_k, steps=t_k, mean_loss=mean_loss,
            edit_digests=digests, wall_time=time.time() - t_start,
        )
        if embedder is not None and captions is not None:
            post = render_training_frames(field, frames[:4], march)
            scores = [
                clip_direction(f.image, img, captions[0], captions[1], embedder).value
                for f, img in zip(frames[:4], post)
            ]
            entry.clip_direction = float(np.mean(scores))
        report.rounds.append(entry)
        report.total_epochs += schedule.epochs_per_round
        if out_path is not None:
            _save_round_state(out_path, trainer, k, report, field)

    if profile.finetune_epochs > 0:
        notify("finetuning", {"epochs": profile.finetune_epochs})
        renders = render_training_frames(field, frames, march, exact=True)
        final_requests = [
            EditRequest(
                image=img, instruction=schedule.instruction,
                text_guidance=schedule.rounds[-1][0],
                image_guidance=profile.image_guidance,
                steps=schedule.rounds[-1][1],
                seed=derive_seed(profile.seed, "ft", f.frame_id),
            )
            for f, img in zip(frames, renders)
        ]
        try:
            edited = edit_batch(editor, final_requests, profile.parallel_edits)
        except EditBatchError as exc:
            raise PduAbort(f"finetune edit: {exc}", resumable_round=schedule.k) from exc
        supervision = {f.frame_id: e.image for f, e in zip(frames, edited)}
        rng = np.random.default_rng(derive_seed(profile.seed, "finetune"))
        report.finetune_mean_loss = trainer.train_epochs(
            frames, supervision, march, profile.finetune_epochs, rng,
            profile.lip_patch_size, finetune_originals=True,
        )
        report.finetune_epochs = profile.finetune_epochs
    notify("done", {})
    return report


def _save_round_state(out_path: Path, trainer: _PduTrainer, completed_round: int,
                      report: PduReport, field: FieldModel):
    out_path.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out_path / f"pdu_round_{completed_round:03d}.trf",
        trainer.sections(),
        field.config.to_json(),
        extra={"completed_round": completed_round},
    )
    state = {"completed_round": completed_round, "report": report.to_json()}
    (out_path / "pdu_state.json").write_text(json.dumps(state, indent=2))


def _load_resume_state(out_path: Path, trainer: _PduTrainer, report: PduReport):
    state_file = out_path / "pdu_state.json"
    if not state_file.exists():
        return 0, report
    state = json.loads(state_file.read_text())
    completed = int(state["completed_round"])
    if completed < 0:
        return 0, report
    sections, _, _ = load_checkpoint(out_path / f"pdu_round_{completed:03d}.trf")
    trainer.load_sections(sections)
    rep = state.get("report", {})
    report.rounds = [
        RoundReport(
            round_index=r["round"], text_guidance=r["s"], steps=r["t"],
            mean_loss=r["mean_loss"], edit_digests=r["edit_digests"],
            wall_time=r["wall_time"], clip_direction=r.get("clip_direction"),
        )
        for r in rep.get("rounds", [])
    ]
    report.total_epochs = rep.get("total_epochs", 0)
    return completed + 1, report
