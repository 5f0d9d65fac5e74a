"""Request/response schemas for the edit-session API."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

PHASES = ("initializing", "idle", "rendering", "editing", "training",
          "finetuning", "done", "failed")

# legal forward moves of the session phase machine
PHASE_ORDER = {
    "initializing": {"idle", "failed"},
    "idle": {"rendering", "failed"},
    "rendering": {"editing", "failed"},
    "editing": {"training", "failed"},
    "training": {"rendering", "finetuning", "done", "failed"},
    "finetuning": {"done", "failed"},
    "done": {"rendering", "failed"},
    "failed": {"rendering"},
}


class SessionStateModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str
    phase: str
    round_index: int = 0
    round_total: int = 0
    latest_loss: float | None = None
    preview_frame: int = 0
    omega: float = 1.0
    omega_max: float = 1.0
    awaiting_confirmation: bool = False
    instruction: str = ""
    error: str | None = None


class EditStartRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    instruction: str = Field(min_length=1)
    schedule_preset: str | None = None
    schedule: list[list[float]] | None = None  # explicit [[s, t], ...]
    epochs_per_round: int | None = None
    subset_size: int | None = None


class OmegaRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    omega: float


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorEnvelope(BaseModel):
    error: ErrorBody
