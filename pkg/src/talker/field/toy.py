"""Analytic "talking blob" scene for desk-scale verification.

An emissive sphere with a mouth cavity whose vertical aperture tracks a
scalar audio signal. The analytic density/color functions plug straight into
the volume renderer, so the rendered dataset and any trained model share the
same quadrature. Lip masks come from exact ray/ellipsoid intersection with a
padded mouth ellipsoid, so mask area is minimal when the mouth is closed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .. import cameras
from .render import MarchConfig, render_patch


def _smoothstep(t: torch.Tensor) -> torch.Tensor:
    t = t.clamp(0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass
class BlobParams:
    head_radius: float = 0.45
    head_density: float = 30.0
    edge_width: float = 0.05
    mouth_center: tuple = (0.0, -0.12, 0.38)
    mouth_halfwidth: float = 0.17       # x semi-axis
    mouth_mindepth: float = 0.025       # y semi-axis at audio 0
    mouth_maxopen: float = 0.11         # y semi-axis gain at audio 1
    mouth_depth: float = 0.14           # z semi-axis
    lip_pad: float = 0.06               # dilation for the lip mask ellipsoid
    camera_distance: float = 2.2
    yaw_amplitude_deg: float = 12.0
    focal_factor: float = 1.5           # fx = fy = factor * width
    background: tuple = (0.10, 0.12, 0.15)
    eye_value: float = 0.6


class TalkingBlob:
    """Analytic field oracle. Query signature matches FieldModel.query_points."""

    def __init__(self, params: BlobParams | None = None):
        self.params = params or BlobParams()

    def mouth_semiaxes(self, audio_level: float) -> np.ndarray:
        p = self.params
        return np.array(
            [p.mouth_halfwidth, p.mouth_mindepth + p.mouth_maxopen * audio_level, p.mouth_depth]
        )

    @staticmethod
    def audio_level(a: torch.Tensor | np.ndarray) -> float:
        """The scalar drive signal is the first audio-feature component."""
        return float(a[0] if not torch.is_tensor(a) else a[0].item())

    def query_points(self, x: torch.Tensor, a, e: float, i: int):
        p = self.params
        level = self.audio_level(a)
        d = x.norm(dim=1)
        body = _smoothstep((p.head_radius - d) / p.edge_width)
        center = torch.as_tensor(p.mouth_center, dtype=x.dtype)
        axes = torch.as_tensor(self.mouth_semiaxes(level), dtype=x.dtype)
        q = ((x - center) / axes).norm(dim=1)
        cavity = _smoothstep((1.0 - q) / 0.25)
        sigma = p.head_density * body * (1.0 - cavity)
        # banded emissive palette, kept under ~0.75 luminance
        rgb = torch.stack(
            [
                0.42 + 0.28 * torch.sin(3.1 * x[:, 0] + 1.8 * x[:, 1]),
                0.40 + 0.25 * torch.sin(2.3 * x[:, 1] - 1.1 * x[:, 2] + 1.0),
                0.38 + 0.24 * torch.sin(2.9 * x[:, 2] + 1.7 * x[:, 0] + 2.0),
            ],
            dim=1,
        )
        return rgb.clamp(0.0, 1.0), sigma

    def lip_mask(self, pose: cameras.CameraPose, intr: cameras.Intrinsics,
                 height: int, width: int, audio_level: float) -> np.ndarray:
        """Binary mask of pixels whose ray hits the padded mouth ellipsoid."""
        p = self.params
        origins, dirs = cameras.patch_rays(pose, intr, (0, 0), (height, width))
        axes = self.mouth_semiaxes(audio_level) + p.lip_pad
        center = np.asarray(p.mouth_center)
        o = (origins.reshape(-1, 3) - center) / axes
        d = dirs.reshape(-1, 3) / axes
        a_ = (d * d).sum(1)
        b_ = 2.0 * (o * d).sum(1)
        c_ = (o * o).sum(1) - 1.0
        disc = b_ * b_ - 4.0 * a_ * c_
        hit = (disc >= 0.0) & (-b_ + np.sqrt(np.maximum(disc, 0.0)) > 0.0)
        return hit.reshape(height, width).astype(np.uint8)


@dataclass
class ToySceneSpec:
    n_frames: int = 32
    height: int = 64
    width: int = 64
    audio_feature_dim: int = 8
    audio_period: int = 16
    fps: float = 25.0
    march: MarchConfig | None = None
    params: BlobParams = dc_field(default_factory=BlobParams)


def audio_feature_vector(level: float, dim: int) -> np.ndarray:
    """Smooth deterministic embedding of the scalar drive signal."""
    ks = np.arange(1, dim)
    feats = np.concatenate([[level], np.sin(math.pi * level * ks / (1.0 + 0.35 * ks))])
    return feats.astype(np.float32)


def toy_camera(spec: ToySceneSpec, frame: int):
    p = spec.params
    yaw = p.yaw_amplitude_deg * math.sin(2.0 * math.pi * frame / max(spec.n_frames, 1))
    eye = np.array(
        [p.camera_distance * math.sin(math.radians(yaw)),
         0.0,
         p.camera_distance * math.cos(math.radians(yaw))]
    )
    pose = cameras.look_at_pose(eye, np.zeros(3))
    intr = cameras.Intrinsics(
        fx=p.focal_factor * spec.width, fy=p.focal_factor * spec.width,
        cx=spec.width / 2.0, cy=spec.height / 2.0,
    )
    return pose, intr


def make_toy_scene(kind: str = "talking_blob", spec: ToySceneSpec | None = None):
    """Build the analytic oracle plus a rendered Dataset of n_frames.

    Returns (oracle, dataset). Frames are rendered through render_patch on the
    analytic field; masks are exact mouth-ellipsoid projections.
    """
    from ..data import Dataset, FrameRecord  # local import avoids a cycle

    if kind != "talking_blob":
        raise ValueError(f"unknown toy scene kind {kind!r}")
    spec = spec or ToySceneSpec()
    oracle = TalkingBlob(spec.params)
    march = spec.march or MarchConfig(background=spec.params.background)
    frames = []
    audio_track = []
    for k in range(spec.n_frames):
        level = 0.5 * (1.0 - math.cos(2.0 * math.pi * k / spec.audio_period))
        a = audio_feature_vector(level, spec.audio_feature_dim)
        pose, intr = toy_camera(spec, k)
        rays = cameras.patch_rays(pose, intr, (0, 0), (spec.height, spec.width))
        out = render_patch(oracle.query_points, rays, torch.from_numpy(a),
                           spec.params.eye_value, 0, march)
        image = out.color.numpy().astype(np.float32)
        mask = oracle.lip_mask(pose, intr, spec.height, spec.width, level)
        frames.append(
            FrameRecord(
                frame_id=k, image=image, pose=pose, intrinsics=intr,
                audio_feature=a, eye_feature=spec.params.eye_value,
                appearance_index=0, lip_mask=mask,
            )
        )
        audio_track.append(a)
    dataset = Dataset.from_frames(
        frames,
        fps=spec.fps,
        background=np.asarray(spec.params.background, dtype=np.float32),
    )
    return oracle, dataset
