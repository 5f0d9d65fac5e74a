"""Instruction-conditioned image editor boundary.

The real editor lives behind a JSON-over-POST wire protocol (POST /edit with a
base64 PNG). For offline work there is a deterministic mock whose edit
strength rho(s, t) grows with the text-guidance scale and diffusion steps, and
whose target transform is a luminance-preserving recolor: re-editing an
already-edited image is then a fixed point, mirroring how an instruction that
is already satisfied leaves a real editor with nothing to do.
"""

from __future__ import annotations

import base64
import concurrent.futures
import hashlib
import json
import math
import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .imaging import decode_png, encode_png


class EditorTransportError(RuntimeError):
    """Retryable transport failure (timeout, connection, 5xx)."""


class EditorProtocolError(RuntimeError):
    """The service answered with something that violates the wire contract."""


class EditorDataError(RuntimeError):
    """The response decoded to unusable pixel data."""


@dataclass(frozen=True)
class EditRequest:
    image: np.ndarray       # (H, W, 3) float32 in [0, 1]
    instruction: str
    text_guidance: float = 7.5
    image_guidance: float = 1.5
    steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.text_guidance) and self.text_guidance >= 0):
            raise ValueError(f"bad text_guidance {self.text_guidance}")
        if not (math.isfinite(self.image_guidance) and self.image_guidance >= 0):
            raise ValueError(f"bad image_guidance {self.image_guidance}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def wire_body(self) -> dict:
        return {
            "image_b64": base64.b64encode(encode_png(self.image)).decode("ascii"),
            "instruction": self.instruction,
            "text_guidance": self.text_guidance,
            "image_guidance": self.image_guidance,
            "steps": self.steps,
            "seed": self.seed,
        }

    def digest(self) -> str:
        body = self.wire_body()
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class EditedFrame:
    image: np.ndarray
    request: EditRequest
    editor_id: str


@dataclass(frozen=True)
class MockProfile:
    """Target transform + strength map of the mock editor.

    rho(s, t) = clamp(s / s_max) * clamp(t / t_max); the target transform is
    tint * luminance (tint has mean 1, so the transform is idempotent as long
    as pixels stay unclamped), optionally followed by a sinusoidal warp that
    is windowed to the inside or outside of a configured lip disk.
    """

    editor_id: str = "mock"
    tint: tuple = (1.25, 1.0, 0.75)
    s_max: float = 7.5
    t_max: float = 20.0
    noise: float = 0.0          # eta(s) = noise * clamp(s / s_max)
    contrast: float = 0.0       # optional tone curve; breaks exact idempotence
    warp_amplitude: float = 0.0  # pixels
    warp_center: tuple | None = None  # normalized (u, v); None disables windowing
    warp_radius: float = 0.2
    warp_inside: bool = True    # warp inside the disk (False: outside only)

    def rho(self, s: float, t: float) -> float:
        return min(max(s / self.s_max, 0.0), 1.0) * min(max(t / self.t_max, 0.0), 1.0)

    def target_transform(self, image: np.ndarray) -> np.ndarray:
        lum = image.mean(axis=2, keepdims=True)
        if self.contrast > 0.0:
            curve = lum * lum * (3.0 - 2.0 * lum)
            lum = (1.0 - self.contrast) * lum + self.contrast * curve
        out = np.clip(lum * np.asarray(self.tint, dtype=np.float32), 0.0, 1.0)
        if self.warp_amplitude > 0.0:
            out = self._warp(out.astype(np.float32))
        return out.astype(np.float32)

    def _warp(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float32),
                             np.arange(w, dtype=np.float32), indexing="ij")
        u, v = xx / w, yy / h
        dx = self.warp_amplitude * np.sin(2.0 * np.pi * (v * 2.0 + 0.25))
        dy = self.warp_amplitude * np.cos(2.0 * np.pi * (u * 2.0))
        if self.warp_center is not None:
            cu, cv = self.warp_center
            dist = np.sqrt((u - cu) ** 2 + (v - cv) ** 2)
            window = np.clip(1.0 - dist / self.warp_radius, 0.0, 1.0)
            if not self.warp_inside:
                window = 1.0 - window
            dx, dy = dx * window, dy * window
        return _bilinear_sample(image, xx + dx, yy + dy)


def _bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    p00 = image[y0, x0]
    p01 = image[y0, x0 + 1]
    p10 = image[y0 + 1, x0]
    p11 = image[y0 + 1, x0 + 1]
    return ((p00 * (1 - fx) + p01 * fx) * (1 - fy) + (p10 * (1 - fx) + p11 * fx) * fy)


def identity_profile() -> MockProfile:
    """rho == 0 at every (s, t): the editor returns its input untouched."""
    return MockProfile(editor_id="mock-identity", s_max=float("inf"))


def hue_shift_profile(noise: float = 0.0) -> MockProfile:
    return MockProfile(editor_id="mock-hue", noise=noise)


def lip_warp_profile(warp_center: tuple, warp_radius: float = 0.22,
                     warp_amplitude: float = 2.5) -> MockProfile:
    return MockProfile(
        editor_id="mock-lipwarp",
        warp_amplitude=warp_amplitude,
        warp_center=warp_center,
        warp_radius=warp_radius,
        warp_inside=True,
    )


MOCK_PROFILES = {
    "identity": identity_profile,
    "hue_shift": hue_shift_profile,
}


def mock_edit(req: EditRequest, profile: MockProfile) -> EditedFrame:
    """I_e = (1 - rho) * image + rho * T(image) + seeded noise of amplitude
    eta(s); deterministic given (req, profile)."""
    rho = profile.rho(req.text_guidance, req.steps)
    if rho == 0.0:
        out = req.image.copy()
    else:
        target = profile.target_transform(req.image)
        out = (1.0 - rho) * req.image + rho * target
    eta = profile.noise * min(max(req.text_guidance / profile.s_max, 0.0), 1.0)
    if eta > 0.0:
        rng = np.random.default_rng(req.seed)
        out = out + rng.normal(0.0, eta, size=out.shape)
    return EditedFrame(np.clip(out, 0.0, 1.0).astype(np.float32), req, profile.editor_id)


class MockEditorClient:
    """Pure, reentrant; safe at any parallelism."""

    def __init__(self, profile: MockProfile | None = None):
        self.profile = profile or identity_profile()

    def edit(self, req: EditRequest) -> EditedFrame:
        return mock_edit(req, self.profile)


class RemoteEditorClient:
    """JSON-over-POST client for a diffusion-editor service.

    POST {base}/edit with the wire body; expects {image_b64, editor_id}.
    Transport failures are retried up to `retries` times before raising.
    """

    def __init__(self, base_url: str, timeout: float = 60.0, retries: int = 2,
                 client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def edit(self, req: EditRequest) -> EditedFrame:
        import httpx

        body = req.wire_body()
        last_exc = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post("/edit", json=body)
            except httpx.HTTPError as exc:
                last_exc = EditorTransportError(f"editor request failed: {exc}")
                time.sleep(min(0.05 * 2**attempt, 1.0))
                continue
            if resp.status_code >= 500:
                last_exc = EditorTransportError(f"editor returned {resp.status_code}")
                time.sleep(min(0.05 * 2**attempt, 1.0))
                continue
            if resp.status_code != 200:
                raise EditorProtocolError(
                    f"editor rejected request: {resp.status_code} {resp.text[:200]}"
                )
            return self._parse_response(resp, req)
        raise last_exc

    def _parse_response(self, resp, req: EditRequest) -> EditedFrame:
        try:
            payload = resp.json()
            image = decode_png(base64.b64decode(payload["image_b64"]))
            editor_id = str(payload.get("editor_id", "remote"))
        except Exception as exc:
            raise EditorProtocolError(f"malformed editor response: {exc}") from exc
        if image.shape != req.image.shape:
            raise EditorProtocolError(
                f"editor returned shape {image.shape}, expected {req.image.shape}"
            )
        if not np.isfinite(image).all():
            raise EditorDataError("editor returned non-finite pixels")
        return EditedFrame(image, req, editor_id)


@dataclass
class EditBatchError(RuntimeError):
    """Some batch items failed; successful results remain usable."""

    failures: list  # (index, message)
    results: list   # EditedFrame | None, in request order

    def __str__(self):
        idx = ", ".join(str(i) for i, _ in self.failures)
        return f"{len(self.failures)} edit(s) failed at indices [{idx}]"


def edit_batch(client, requests: list[EditRequest], parallelism: int = 4) -> list[EditedFrame]:
    """Edit all requests; results come back in request order.

    Raises EditBatchError (carrying partial results) if any item fails after
    the client's own retry budget.
    """
    if not requests:
        return []
    results: list = [None] * len(requests)
    failures: list = []
    workers = max(1, min(parallelism, len(requests)))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(client.edit, r): i for i, r in enumerate(requests)}
        for fut in concurrent.futures.as_completed(futures):
            i = futures[fut]
            try:
                results[i] = fut.result()
            except Exception as exc:
                failures.append((i, str(exc)))
    if failures:
        failures.sort()
        raise EditBatchError(failures, results)
    return results
