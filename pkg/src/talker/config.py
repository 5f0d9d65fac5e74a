"""Run configuration: a JSON file validated against pydantic models before any
work starts. Unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, ValidationError

from .editor import MockEditorClient, MockProfile, RemoteEditorClient, lip_warp_profile
from .field.model import FieldConfig
from .field.render import MarchConfig
from .losses import LossWeights
from .pdu import PduProfile, PduSchedule, make_default_schedule


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FieldSection(_Section):
    spatial_levels: int = 6
    base_resolution: int = 16
    max_resolution: int = 128
    table_size: int = 2**14
    features_per_level: int = 2
    audio_feature_dim: int = 32
    audio_proj_dim: int = 4
    audio_dim: int = 2
    audio_grid_resolution: int = 16
    audio_grid_features: int = 4
    head_width: int = 64
    head_depth: int = 1
    geo_features: int = 16
    appearance_count: int = 4
    appearance_dim: int = 4
    bound: float = 1.0

    def build(self) -> FieldConfig:
        return FieldConfig(**self.model_dump())


class MarchSection(_Section):
    n_samples: int = 24
    near: float = 0.5
    far: float = 3.5
    clip_to_bound: float | None = 1.0
    ray_chunk: int = 512
    color_weight_floor: float = 1e-4

    def build(self, background=(0.0, 0.0, 0.0)) -> MarchConfig:
        return MarchConfig(background=tuple(float(c) for c in background),
                           **self.model_dump())


class ScheduleSection(_Section):
    preset: str = "standard"
    rounds: list | None = None          # [[s, t], ...] overrides the preset
    epochs_per_round: int | None = None
    subset_size: int = 200

    def build(self, instruction: str) -> PduSchedule:
        if self.rounds is not None:
            d = self.epochs_per_round or 75
            sched = PduSchedule(tuple((float(s), int(t)) for s, t in self.rounds), d)
        else:
            sched = make_default_schedule(self.preset)
            if self.epochs_per_round is not None:
                sched = PduSchedule(sched.rounds, self.epochs_per_round)
        return sched.with_instruction(instruction, self.subset_size)


class MockProfileSection(_Section):
    name: str = "hue_shift"  # identity | hue_shift | lip_warp | custom
    tint: list = [1.25, 1.0, 0.75]
    s_max: float = 7.5
    t_max: float = 20.0
    noise: float = 0.0
    contrast: float = 0.0
    warp_amplitude: float = 0.0
    warp_center: list | None = None
    warp_radius: float = 0.22
    warp_inside: bool = True

    def build(self) -> MockProfile:
        if self.name == "identity":
            return MockProfile(editor_id="mock-identity", s_max=float("inf"))
        if self.name == "lip_warp":
            if self.warp_center is None:
                raise ConfigError("lip_warp profile requires warp_center")
            return lip_warp_profile(tuple(self.warp_center), self.warp_radius,
                                    self.warp_amplitude or 2.5)
        return MockProfile(
            editor_id=f"mock-{self.name}",
            tint=tuple(self.tint),
            s_max=self.s_max,
            t_max=self.t_max,
            noise=self.noise,
            contrast=self.contrast,
            warp_amplitude=self.warp_amplitude,
            warp_center=tuple(self.warp_center) if self.warp_center else None,
            warp_radius=self.warp_radius,
            warp_inside=self.warp_inside,
        )


class EditorSection(_Section):
    kind: str = "mock"  # mock | remote
    endpoint: str | None = None
    timeout: float = 120.0
    retries: int = 2
    parallelism: int = 4
    mock: MockProfileSection = MockProfileSection()

    def build(self):
        if self.kind == "mock":
            return MockEditorClient(self.mock.build())
        if self.kind == "remote":
            if not self.endpoint:
                raise ConfigError("remote editor requires an endpoint")
            return RemoteEditorClient(self.endpoint, timeout=self.timeout,
                                      retries=self.retries)
        raise ConfigError(f"unknown editor kind {self.kind!r}")


class LossSection(_Section):
    rec: float = 1.0
    pcp: float = 0.001
    style: float = 10.0
    adv: float = 0.01
    lip: float = 0.1
    extractor: str = "toy:?seed=0"
    adversarial: bool = True
    disc_base: int = 16

    def build_weights(self) -> LossWeights:
        return LossWeights(rec=self.rec, pcp=self.pcp, style=self.style,
                           adv=self.adv, lip=self.lip)

    def build_extractor(self):
        from .losses import ToyFeatureExtractor, VGGFeatureExtractor

        if self.extractor.startswith("toy:"):
            from urllib.parse import parse_qs, urlparse

            q = parse_qs(urlparse(self.extractor).query)
            return ToyFeatureExtractor(seed=int(q.get("seed", ["0"])[0]))
        if self.extractor == "vgg":
            return VGGFeatureExtractor()
        raise ConfigError(f"unknown feature extractor {self.extractor!r}")


class TrainSection(_Section):
    init_epochs: int = 72
    patch_size: int = 256
    lip_patch_size: int = 64
    finetune_epochs: int = 100
    lr_field: float = 5e-4
    lr_refine: float = 2e-4
    table_lr_scale: float = 10.0
    disc_lr: float = 2e-4
    omega_train: float = 1.0
    image_guidance: float = 1.5
    jitter: bool = False
    refine_nf: int = 16
    refine_gc: int = 8

    def build_profile(self, seed: int, parallelism: int, adversarial: bool) -> PduProfile:
        return PduProfile(
            patch_size=self.patch_size,
            lip_patch_size=self.lip_patch_size,
            finetune_epochs=self.finetune_epochs,
            lr_field=self.lr_field,
            lr_refine=self.lr_refine,
            table_lr_scale=self.table_lr_scale,
            disc_lr=self.disc_lr,
            omega_train=self.omega_train,
            image_guidance=self.image_guidance,
            parallel_edits=parallelism,
            adversarial=adversarial,
            seed=seed,
        )


class MetricsSection(_Section):
    image_embedder: str = "toy:?seed=0"
    sync_scorer: str = "none"
    caption_pre: str = "a photograph of a person"
    caption_post: str = "an edited photograph of a person"


class ServiceSection(_Section):
    port: int = 8321
    preview_max: int = 256
    manual_confirm: bool = False
    omega_max: float = 1.0


class RunConfig(_Section):
    dataset: str
    output_dir: str
    instruction: str = ""
    seed: int = 0
    threads: int | None = None
    field: FieldSection = FieldSection()
    march: MarchSection = MarchSection()
    schedule: ScheduleSection = ScheduleSection()
    editor: EditorSection = EditorSection()
    losses: LossSection = LossSection()
    train: TrainSection = TrainSection()
    metrics: MetricsSection = MetricsSection()
    service: ServiceSection = ServiceSection()


def load_run_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_run_config(raw)


def parse_run_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
