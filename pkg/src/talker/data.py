"""Dataset ingestion, frame records, train/test split, patch sampling.

Directory layout: frames/%06d.png (8-bit RGB), masks/%06d.png (0/255),
audio/features.bin ("ATRF" magic, u32 frame count, u32 feature length, u32
reserved, then row-major little-endian float32), poses.json, meta.json.
The train split is the first 90% of frames; the rest is held out.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import cameras

AUDIO_MAGIC = b"ATRF"


class DataLoadError(RuntimeError):
    """A file is missing or unreadable; the message names it."""


class SchemaError(ValueError):
    """Contents violate the dataset invariants."""


@dataclass
class FrameRecord:
    frame_id: int
    image: np.ndarray        # (H, W, 3) float32 in [0, 1]
    pose: cameras.CameraPose
    intrinsics: cameras.Intrinsics
    audio_feature: np.ndarray  # (A,) float32
    eye_feature: float         # blink openness in [0, 1]
    appearance_index: int
    lip_mask: np.ndarray       # (H, W) uint8 in {0, 1}
    face_visible: bool = True

    def validate(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise SchemaError(f"frame {self.frame_id}: image must be HxWx3")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise SchemaError(f"frame {self.frame_id}: image values outside [0, 1]")
        if self.lip_mask.shape != self.image.shape[:2]:
            raise SchemaError(
                f"frame {self.frame_id}: mask shape {self.lip_mask.shape} "
                f"!= image shape {self.image.shape[:2]}"
            )
        if not np.isin(self.lip_mask, (0, 1)).all():
            raise SchemaError(f"frame {self.frame_id}: mask values must be 0/1")
        if self.face_visible and not self.lip_mask.any():
            raise SchemaError(f"frame {self.frame_id}: empty lip mask on a visible face")
        if not 0.0 <= self.eye_feature <= 1.0:
            raise SchemaError(f"frame {self.frame_id}: eye feature outside [0, 1]")


class Dataset:
    """Immutable after construction; safe for concurrent reads."""

    def __init__(self, frames: list[FrameRecord], fps: float, background: np.ndarray):
        if not frames:
            raise SchemaError("dataset has no frames")
        ids = [f.frame_id for f in frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise SchemaError("frame_ids must be strictly increasing")
        h, w = frames[0].image.shape[:2]
        a_dim = frames[0].audio_feature.shape[0]
        for f in frames:
            f.validate()
            if f.image.shape[:2] != (h, w):
                raise SchemaError(f"frame {f.frame_id}: inconsistent image size")
            if f.audio_feature.shape[0] != a_dim:
                raise SchemaError(f"frame {f.frame_id}: inconsistent audio length")
        self.frames = frames
        self.fps = float(fps)
        self.background = np.asarray(background, dtype=np.float32)
        self.height, self.width, self.audio_dim = h, w, a_dim
        self._train_count = int(len(frames) * 0.9)

    @staticmethod
    def from_frames(frames, fps=25.0, background=(0.0, 0.0, 0.0)) -> "Dataset":
        return Dataset(list(frames), fps, np.asarray(background, dtype=np.float32))

    @property
    def train_frames(self) -> list[FrameRecord]:
        return self.frames[: self._train_count]

    @property
    def test_frames(self) -> list[FrameRecord]:
        return self.frames[self._train_count:]

    @property
    def audio_track(self) -> np.ndarray:
        return np.stack([f.audio_feature for f in self.frames])


@dataclass
class Patch:
    origin: tuple        # (row, col)
    size: tuple          # (h, w)
    pixels: np.ndarray   # (h, w, 3) float32
    rays: tuple          # (origins, dirs), each (h, w, 3) float32, unit dirs
    mask_crop: np.ndarray  # (h, w) uint8


def _frame_path(root: Path, sub: str, frame_id: int) -> Path:
    return root / sub / f"{frame_id:06d}.png"


def load_dataset(root_path) -> Dataset:
    root = Path(root_path)
    if not root.is_dir():
        raise DataLoadError(f"dataset directory not found: {root}")
    meta_path = root / "meta.json"
    poses_path = root / "poses.json"
    audio_path = root / "audio" / "features.bin"
    for p in (meta_path, poses_path, audio_path):
        if not p.exists():
            raise DataLoadError(f"missing dataset file: {p}")
    try:
        meta = json.loads(meta_path.read_text())
        poses = json.loads(poses_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataLoadError(f"corrupt JSON in dataset: {exc}") from exc
    audio = _read_audio_features(audio_path)
    pose_entries = {int(e["frame_id"]): e for e in poses["frames"]}
    n = len(pose_entries)
    if audio.shape[0] != n:
        raise SchemaError(
            f"audio track has {audio.shape[0]} frames but poses.json lists {n}"
        )
    eye = meta.get("eye_features")
    app = meta.get("appearance_indices")
    visible = meta.get("face_visible", [True] * n)
    if eye is None or app is None or len(eye) != n or len(app) != n:
        raise SchemaError("meta.json eye_features/appearance_indices must cover every frame")
    frames = []
    for k, fid in enumerate(sorted(pose_entries)):
        img_path = _frame_path(root, "frames", fid)
        mask_path = _frame_path(root, "masks", fid)
        for p in (img_path, mask_path):
            if not p.exists():
                raise DataLoadError(f"missing dataset file: {p}")
        image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        mask = (np.asarray(Image.open(mask_path).convert("L")) > 127).astype(np.uint8)
        entry = pose_entries[fid]
        frames.append(
            FrameRecord(
                frame_id=fid,
                image=image,
                pose=cameras.CameraPose.from_json(entry["extrinsics"]),
                intrinsics=cameras.Intrinsics.from_json(entry["intrinsics"]),
                audio_feature=audio[k],
                eye_feature=float(eye[k]),
                appearance_index=int(app[k]),
                lip_mask=mask,
                face_visible=bool(visible[k]),
            )
        )
    expected = (int(meta["height"]), int(meta["width"]))
    if frames and frames[0].image.shape[:2] != expected:
        raise SchemaError(
            f"meta.json declares {expected} but frames are {frames[0].image.shape[:2]}"
        )
    return Dataset(frames, meta.get("fps", 25.0), meta.get("background_color", (0, 0, 0)))


def save_dataset(dataset: Dataset, root_path) -> Path:
    root = Path(root_path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    pose_entries = []
    for f in dataset.frames:
        img = Image.fromarray(np.round(f.image * 255.0).astype(np.uint8))
        img.save(_frame_path(root, "frames", f.frame_id))
        Image.fromarray((f.lip_mask * 255).astype(np.uint8)).save(
            _frame_path(root, "masks", f.frame_id)
        )
        pose_entries.append(
            {
                "frame_id": f.frame_id,
                "extrinsics": f.pose.to_json(),
                "intrinsics": f.intrinsics.to_json(),
            }
        )
    _write_audio_features(root / "audio" / "features.bin", dataset.audio_track)
    (root / "poses.json").write_text(json.dumps({"frames": pose_entries}))
    meta = {
        "height": dataset.height,
        "width": dataset.width,
        "fps": dataset.fps,
        "eye_features": [f.eye_feature for f in dataset.frames],
        "appearance_indices": [f.appearance_index for f in dataset.frames],
        "face_visible": [f.face_visible for f in dataset.frames],
        "background_color": [float(c) for c in dataset.background],
    }
    (root / "meta.json").write_text(json.dumps(meta))
    return root


def _read_audio_features(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != AUDIO_MAGIC:
        raise DataLoadError(f"bad audio feature header in {path}")
    count, a_dim, _reserved = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw, dtype="<f4", offset=16)
    if body.size != count * a_dim:
        raise SchemaError(
            f"{path}: expected {count}x{a_dim} floats, found {body.size}"
        )
    return body.reshape(count, a_dim).copy()


def _write_audio_features(path: Path, track: np.ndarray):
    track = np.ascontiguousarray(track, dtype="<f4")
    header = AUDIO_MAGIC + struct.pack("<III", track.shape[0], track.shape[1], 0)
    path.write_bytes(header + track.tobytes())


def select_training_subset(dataset: Dataset, n: int, seed: int) -> list[FrameRecord]:
    """Deterministic stride-based subset of the train split.

    The stride is train_size // n and the phase is seed % stride, so the
    selection covers the audio range uniformly and is reproducible.
    """
    train = dataset.train_frames
    if n > len(train):
        raise ValueError(f"requested {n} frames but train split has {len(train)}")
    if n == len(train):
        return list(train)
    stride = len(train) // n
    offset = seed % stride
    return [train[offset + k * stride] for k in range(n)]


class PatchSampleError(RuntimeError):
    pass


def sample_patch(frame: FrameRecord, size: tuple, region: str = "full",
                 rng: np.random.Generator | None = None) -> Patch:
    """Crop a patch and build its per-pixel rays.

    region="full": uniform in-bounds crop. region="lip": the crop is centered
    on a uniformly drawn lip-mask pixel (guaranteeing mask coverage), clamped
    to stay inside the image.
    """
    rng = rng or np.random.default_rng()
    h, w = size
    ih, iw = frame.image.shape[:2]
    if h > ih or w > iw:
        raise ValueError(f"patch {size} exceeds image {(ih, iw)}")
    if region == "full":
        r0 = int(rng.integers(0, ih - h + 1))
        c0 = int(rng.integers(0, iw - w + 1))
    elif region == "lip":
        ys, xs = np.nonzero(frame.lip_mask)
        if ys.size == 0:
            raise PatchSampleError(f"frame {frame.frame_id}: empty lip mask")
        pick = int(rng.integers(0, ys.size))
        r0 = int(np.clip(ys[pick] - h // 2, 0, ih - h))
        c0 = int(np.clip(xs[pick] - w // 2, 0, iw - w))
    else:
        raise ValueError(f"unknown region {region!r}")
    pixels = frame.image[r0:r0 + h, c0:c0 + w].copy()
    mask = frame.lip_mask[r0:r0 + h, c0:c0 + w].copy()
    rays = cameras.patch_rays(frame.pose, frame.intrinsics, (r0, c0), (h, w))
    return Patch(origin=(r0, c0), size=(h, w), pixels=pixels, rays=rays, mask_crop=mask)
