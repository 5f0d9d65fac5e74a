"""Single edit session: one field, one PDU run at a time.

Mutations (start edit, set omega, advance round) serialize through a lock;
reads render from immutable snapshots handed off at phase boundaries, so
previews never contend with the training thread for more than a copy.
"""

from __future__ import annotations

import copy
import queue
import threading
import uuid

import numpy as np
import torch

from .. import cameras, pipeline
from ..config import RunConfig
from ..field.render import FastFieldRenderer
from ..imaging import encode_png
from ..pdu import PduSchedule, make_default_schedule
from ..refine import blend, refine_residual
from .models import PHASE_ORDER, SessionStateModel


class IllegalPhase(RuntimeError):
    pass


class SessionManager:
    def __init__(self, config: RunConfig):
        self.config = config
        self.session_id = uuid.uuid4().hex[:12]
        self._lock = threading.Lock()
        self._advance = threading.Event()
        self._subscribers: list[queue.Queue] = []
        self._worker: threading.Thread | None = None
        self._snapshot = None          # (field, refiner) frozen copies
        self._renderer = None          # FastFieldRenderer over the snapshot
        self.dataset = pipeline.load_dataset_for(config)
        self.march = pipeline.march_for(config, self.dataset)
        self.state = SessionStateModel(
            session_id=self.session_id,
            phase="initializing",
            omega=1.0,
            omega_max=config.service.omega_max,
            round_total=0,
        )
        self._startup()

    # --- lifecycle -----------------------------------------------------------

    def _startup(self):
        try:
            ckpt = pipeline._default_checkpoint(self.config)
        except FileNotFoundError:
            ckpt = None
        if ckpt is not None:
            field, refiner = pipeline.load_models_from_checkpoint(ckpt, self.config)
            self._publish_snapshot(field, refiner)
            self._set_phase("idle")
        else:
            self._worker = threading.Thread(target=self._run_init, daemon=True)
            self._worker.start()

    def _run_init(self):
        try:
            result = pipeline.cmd_init(self.config)
            field, refiner = pipeline.load_models_from_checkpoint(result.checkpoint, self.config)
            self._publish_snapshot(field, refiner)
            self._set_phase("idle")
        except Exception as exc:  # noqa: BLE001 - worker boundary
            self._fail(str(exc))

    def _publish_snapshot(self, field, refiner):
        field = copy.deepcopy(field)
        refiner = copy.deepcopy(refiner)
        field.eval()
        refiner.eval()
        self._snapshot = (field, refiner)
        self._renderer = FastFieldRenderer(field)

    # --- state machine ---------------------------------------------------------

    def _set_phase(self, phase: str, **updates):
        with self._lock:
            if phase != self.state.phase and phase not in PHASE_ORDER.get(self.state.phase, set()):
                raise IllegalPhase(f"cannot move from {self.state.phase} to {phase}")
            payload = {"phase": phase, **updates}
            self.state = self.state.model_copy(update=payload)
            self._broadcast()

    def _update(self, **updates):
        with self._lock:
            self.state = self.state.model_copy(update=updates)
            self._broadcast()

    def _fail(self, message: str):
        with self._lock:
            self.state = self.state.model_copy(update={"phase": "failed", "error": message})
            self._broadcast()

    def _broadcast(self):
        dead = []
        for q in self._subscribers:
            try:
                q.put_nowait(self.state.model_dump())
            except queue.Full:
                dead.append(q)
        for q in dead:
            self._subscribers.remove(q)

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=256)
        q.put_nowait(self.state.model_dump())
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue):
        if q in self._subscribers:
            self._subscribers.remove(q)

    # --- commands ----------------------------------------------------------------

    def start_edit(self, instruction: str, schedule: PduSchedule | None = None):
        with self._lock:
            if self.state.phase not in ("idle", "done", "failed"):
                raise IllegalPhase(f"cannot start an edit while {self.state.phase}")
            running = self._worker is not None and self._worker.is_alive()
        if running:
            raise IllegalPhase("an edit worker is still running")
        sched = schedule or self.config.schedule.build(instruction)
        sched = sched.with_instruction(instruction)
        self._advance.clear()
        self._update(instruction=instruction, round_total=sched.k, error=None)
        self._worker = threading.Thread(
            target=self._run_edit, args=(instruction, sched), daemon=True
        )
        self._worker.start()

    def _run_edit(self, instruction: str, schedule: PduSchedule):
        try:
            result = pipeline.cmd_edit(
                self.config, instruction=instruction,
                progress=self._on_progress, schedule_override=schedule,
            )
            field, refiner = pipeline.load_models_from_checkpoint(result.checkpoint, self.config)
            self._publish_snapshot(field, refiner)
            self._set_phase("done")
        except Exception as exc:  # noqa: BLE001 - worker boundary
            self._fail(str(exc))

    def _on_progress(self, phase: str, info: dict):
        round_index = int(info.get("round", self.state.round_index))
        if phase == "rendering" and self.config.service.manual_confirm and round_index > 0:
            self._update(awaiting_confirmation=True)
            self._advance.wait()
            self._advance.clear()
            self._update(awaiting_confirmation=False)
        if "field" in info:
            self._publish_snapshot(info["field"], info["refiner"])
        if phase == "done":
            return  # the worker publishes the final snapshot and phase
        updates = {"round_index": round_index}
        if "mean_loss" in info:
            updates["latest_loss"] = info["mean_loss"]
        self._set_phase(phase, **updates)

    def advance_round(self):
        with self._lock:
            if not self.state.awaiting_confirmation:
                raise IllegalPhase("no round is awaiting confirmation")
        self._advance.set()

    def set_omega(self, omega: float):
        if not 0.0 <= omega <= self.config.service.omega_max:
            raise ValueError(
                f"omega {omega} outside [0, {self.config.service.omega_max}]"
            )
        self._update(omega=float(omega))

    # --- previews -------------------------------------------------------------------

    def preview_png(self, frame_id: int, omega: float | None = None) -> bytes:
        if self._renderer is None:
            raise IllegalPhase("no snapshot available yet")
        frames = {f.frame_id: f for f in self.dataset.frames}
        if frame_id not in frames:
            raise KeyError(f"unknown frame {frame_id}")
        w = self.state.omega if omega is None else omega
        if not 0.0 <= w <= self.config.service.omega_max:
            raise ValueError(f"omega {w} outside [0, {self.config.service.omega_max}]")
        f = frames[frame_id]
        h, wid = f.image.shape[:2]
        scale = min(1.0, self.config.service.preview_max / max(h, wid))
        field, refiner = self._snapshot
        intr = f.intrinsics
        if scale < 1.0:
            h, wid = int(h * scale), int(wid * scale)
            intr = cameras.Intrinsics(intr.fx * scale, intr.fy * scale,
                                      intr.cx * scale, intr.cy * scale)
        rays = cameras.patch_rays(f.pose, intr, (0, 0), (h, wid))
        out = self._renderer.render_frame(rays, f.audio_feature, f.eye_feature,
                                          f.appearance_index, self.march)
        img = out.color
        if w != 0.0:
            with torch.no_grad():
                img = blend(img, refine_residual(refiner, img), w)
        return encode_png(img.numpy().astype(np.float32))

    def report_json(self):
        import json
        from pathlib import Path

        path = Path(self.config.output_dir) / "pdu_report.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())
