"""Camera poses, intrinsics, and per-pixel ray generation.

Convention: extrinsics are world-to-camera [R|t] (3x4), camera looks down +z
(OpenCV style), intrinsics in pixels. Ray directions are unit-norm in world
space, so march distances are world units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @staticmethod
    def from_json(d: dict) -> "Intrinsics":
        return Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsics: x_cam = R @ x_world + t."""

    rotation: np.ndarray  # 3x3
    translation: np.ndarray  # 3

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {r.shape}, {t.shape}")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_matrix(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)  # 3x4

    def to_json(self) -> list:
        return self.to_matrix().tolist()

    @staticmethod
    def from_json(rows: list) -> "CameraPose":
        m = np.asarray(rows, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"extrinsics must be 3x4, got {m.shape}")
        return CameraPose(m[:, :3], m[:, 3])


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """World-to-camera pose for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)  # +y points down in image space
    r = np.stack([right, down, fwd], axis=0)  # rows: camera axes in world coords
    t = -r @ eye
    return CameraPose(r, t)


def yaw_pose(pose: CameraPose, yaw_deg: float, target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Orbit the camera about the world +y axis through `target` by yaw_deg."""
    c = pose.camera_center - np.asarray(target, dtype=np.float64)
    a = np.deg2rad(yaw_deg)
    rot = np.array(
        [[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]]
    )
    return look_at_pose(rot @ c + target, target)


def pixel_rays(pose: CameraPose, intr: Intrinsics, rows: np.ndarray, cols: np.ndarray):
    """Rays through pixel centers (row+0.5, col+0.5).

    rows/cols: integer arrays of identical shape. Returns (origins, dirs),
    each shape (*rows.shape, 3), float32, dirs unit-norm.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    x = (cols + 0.5 - intr.cx) / intr.fx
    y = (rows + 0.5 - intr.cy) / intr.fy
    d_cam = np.stack([x, y, np.ones_like(x, dtype=np.float64)], axis=-1)
    d_world = d_cam @ pose.rotation  # == R.T @ d per pixel
    d_world = d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.camera_center, d_world.shape)
    return o.astype(np.float32).copy(), d_world.astype(np.float32)


def patch_rays(pose: CameraPose, intr: Intrinsics, origin: tuple, size: tuple):
    """Ray grid for an (h, w) patch whose top-left pixel is `origin`."""
    r0, c0 = origin
    h, w = size
    rr, cc = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
    return pixel_rays(pose, intr, rr, cc)
