"""Evaluation metrics over pluggable embedders.

Directional embedding similarity, identity distance, flow-warped temporal
error (short-term against the previous frame, long-term against the first),
and a sync-score passthrough that reports "unavailable" rather than invent a
number when no scorer is plugged in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNAVAILABLE = "unavailable"


class MetricError(RuntimeError):
    pass


# --- embedders ---------------------------------------------------------------


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return v
    return v / n


class ToyEmbedder:
    """Deterministic stand-in: fixed random projections of downsampled pixels
    for images, a character-bucket histogram projection for text."""

    def __init__(self, dim: int = 32, seed: int = 0, grid: int = 16):
        self.dim = dim
        self.grid = grid
        rng = np.random.default_rng(seed)
        self._img_proj = rng.normal(size=(grid * grid, dim)).astype(np.float64)
        self._txt_proj = rng.normal(size=(64, dim)).astype(np.float64)
        self._id_proj = rng.normal(size=(grid * grid, dim)).astype(np.float64)

    def _pool(self, image: np.ndarray) -> np.ndarray:
        gray = np.asarray(image, dtype=np.float64).mean(axis=2)
        h, w = gray.shape
        ys = np.linspace(0, h, self.grid + 1).astype(int)
        xs = np.linspace(0, w, self.grid + 1).astype(int)
        out = np.empty((self.grid, self.grid))
        for i in range(self.grid):
            for j in range(self.grid):
                cell = gray[ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)]
                out[i, j] = cell.mean()
        return out.reshape(-1)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return _l2_normalize(self._pool(image) @ self._img_proj)

    def embed_text(self, text: str) -> np.ndarray:
        buckets = np.zeros(64)
        for ch in text.lower():
            buckets[ord(ch) % 64] += 1.0
        return _l2_normalize(buckets @ self._txt_proj)

    def embed_identity(self, image: np.ndarray) -> np.ndarray:
        return _l2_normalize(self._pool(image) @ self._id_proj)


class RemoteEmbedder:
    """JSON-over-POST embedder following the editor module's conventions."""

    def __init__(self, base_url: str, timeout: float = 30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def _post(self, path: str, body: dict) -> np.ndarray:
        import httpx

        try:
            resp = self._client.post(path, json=body)
        except httpx.HTTPError as exc:
            raise MetricError(f"embedder request failed: {exc}") from exc
        if resp.status_code != 200:
            raise MetricError(f"embedder returned {resp.status_code}")
        return _l2_normalize(np.asarray(resp.json()["vector"], dtype=np.float64))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        import base64

        from .imaging import encode_png

        b64 = base64.b64encode(encode_png(image)).decode("ascii")
        return self._post("/embed_image", {"image_b64": b64})

    def embed_text(self, text: str) -> np.ndarray:
        return self._post("/embed_text", {"text": text})

    def embed_identity(self, image: np.ndarray) -> np.ndarray:
        import base64

        from .imaging import encode_png

        b64 = base64.b64encode(encode_png(image)).decode("ascii")
        return self._post("/embed_identity", {"image_b64": b64})


def make_embedder(uri: str):
    """"toy:?seed=0&dim=32" or an http(s) endpoint; empty/none -> None."""
    if not uri or uri == "none":
        return None
    if uri.startswith("toy:"):
        from urllib.parse import parse_qs, urlparse

        q = parse_qs(urlparse(uri).query)
        return ToyEmbedder(
            dim=int(q.get("dim", ["32"])[0]), seed=int(q.get("seed", ["0"])[0])
        )
    if uri.startswith("http://") or uri.startswith("https://"):
        return RemoteEmbedder(uri)
    raise ValueError(f"unknown embedder uri {uri!r}")


# --- directional similarity and identity -------------------------------------


@dataclass(frozen=True)
class DirectionScore:
    value: float
    degenerate: bool = False


def clip_direction(image_pre: np.ndarray, image_post: np.ndarray,
                   caption_pre: str, caption_post: str, emb) -> DirectionScore:
    """Cosine between the image-embedding delta and the caption-embedding
    delta; zero-length deltas are flagged degenerate and score 0."""
    d_img = emb.embed_image(image_post) - emb.embed_image(image_pre)
    d_txt = emb.embed_text(caption_post) - emb.embed_text(caption_pre)
    ni, nt = float(np.linalg.norm(d_img)), float(np.linalg.norm(d_txt))
    if ni < 1e-12 or nt < 1e-12:
        return DirectionScore(0.0, degenerate=True)
    return DirectionScore(float(np.dot(d_img, d_txt) / (ni * nt)))


def identity_distance(image_a: np.ndarray, image_b: np.ndarray, emb) -> float:
    """Angle (radians) between identity embeddings."""
    cos = float(np.dot(emb.embed_identity(image_a), emb.embed_identity(image_b)))
    return float(math.acos(min(1.0, max(-1.0, cos))))


# --- optical flow and warping error -------------------------------------------


@dataclass
class FlowField:
    flow: np.ndarray   # (H, W, 2) displacement (dx, dy) in pixels, backward
    valid: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        if not np.isfinite(self.flow).all():
            raise MetricError("flow field contains non-finite values")


def estimate_flow(src: np.ndarray, dst: np.ndarray, block: int = 8,
                  search: int = 8) -> FlowField:
    """Coarse block-matching backward flow: for each dst block, the SAD-best
    displacement into src. Validity from forward-backward consistency."""
    fwd = _block_match(src, dst, block, search)
    bwd = _block_match(dst, src, block, search)
    h, w = dst.shape[:2]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = np.clip(np.round(xx + fwd[..., 0]).astype(int), 0, w - 1)
    sy = np.clip(np.round(yy + fwd[..., 1]).astype(int), 0, h - 1)
    round_trip = fwd + bwd[sy, sx]
    valid = (np.abs(round_trip).sum(axis=2) <= 1.5).astype(np.uint8)
    return FlowField(fwd.astype(np.float32), valid)


def _block_match(src: np.ndarray, dst: np.ndarray, block: int, search: int) -> np.ndarray:
    h, w = dst.shape[:2]
    flow = np.zeros((h, w, 2), dtype=np.float32)
    for by in range(0, h, block):
        for bx in range(0, w, block):
            tile = dst[by:by + block, bx:bx + block]
            th, tw = tile.shape[:2]
            best = None
            best_d = (0, 0)
            for dy in range(-search, search + 1):
                sy = by + dy
                if sy < 0 or sy + th > h:
                    continue
                for dx in range(-search, search + 1):
                    sx = bx + dx
                    if sx < 0 or sx + tw > w:
                        continue
                    cand = src[sy:sy + th, sx:sx + tw]
                    cost = float(np.abs(cand - tile).sum())
                    if best is None or cost < best:
                        best, best_d = cost, (dx, dy)
            flow[by:by + block, bx:bx + block] = best_d
    return flow


def warp_image(image: np.ndarray, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp `image` by the flow; returns (warped, in_bounds mask)."""
    h, w = image.shape[:2]
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = xx + flow.flow[..., 0]
    sy = yy + flow.flow[..., 1]
    in_bounds = ((sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)).astype(np.uint8)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 2)
    fx = np.clip(sx - x0, 0.0, 1.0)[..., None]
    fy = np.clip(sy - y0, 0.0, 1.0)[..., None]
    img = np.asarray(image, dtype=np.float64)
    p00, p01 = img[y0, x0], img[y0, x0 + 1]
    p10, p11 = img[y0 + 1, x0], img[y0 + 1, x0 + 1]
    warped = (p00 * (1 - fx) + p01 * fx) * (1 - fy) + (p10 * (1 - fx) + p11 * fx) * fy
    return warped, in_bounds * flow.valid


def _masked_l1(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    m = mask.astype(bool)
    if not m.any():
        raise MetricError("warping error: no valid pixels to compare")
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return float(diff[m].mean())


def warping_error(frames: list, short_flows: list | None = None,
                  long_flows: list | None = None) -> float:
    """E_w: half short-term (consecutive pairs), half long-term (against the
    first frame). Flows may be supplied; otherwise block matching estimates
    them. short_flows[i] warps frame i to frame i+1; long_flows[i] warps
    frame 0 to frame i+1."""
    if len(frames) < 2:
        raise MetricError("warping error needs at least two frames")
    n = len(frames) - 1
    if short_flows is None:
        short_flows = [estimate_flow(frames[i], frames[i + 1]) for i in range(n)]
    if long_flows is None:
        long_flows = [estimate_flow(frames[0], frames[i + 1]) for i in range(n)]
    short_terms, long_terms = [], []
    for i in range(n):
        warped, mask = warp_image(frames[i], short_flows[i])
        short_terms.append(_masked_l1(warped, frames[i + 1], mask))
        warped0, mask0 = warp_image(frames[0], long_flows[i])
        long_terms.append(_masked_l1(warped0, frames[i + 1], mask0))
    return 0.5 * float(np.mean(short_terms)) + 0.5 * float(np.mean(long_terms))


# --- sync score ---------------------------------------------------------------


class FixtureSyncScorer:
    def __init__(self, value: float):
        self.value = float(value)

    def score(self, frames, audio_track) -> float:
        return self.value


class RemoteSyncScorer:
    def __init__(self, base_url: str, timeout: float = 60.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def score(self, frames, audio_track) -> float:
        import base64

        import httpx

        from .imaging import encode_png

        body = {
            "frames_b64": [base64.b64encode(encode_png(f)).decode("ascii") for f in frames],
            "audio": np.asarray(audio_track, dtype=float).tolist(),
        }
        try:
            resp = self._client.post("/sync", json=body)
        except httpx.HTTPError as exc:
            raise MetricError(f"sync scorer request failed: {exc}") from exc
        if resp.status_code != 200:
            raise MetricError(f"sync scorer returned {resp.status_code}")
        return float(resp.json()["score"])


def make_sync_scorer(uri: str, fixture_value: float | None = None):
    if not uri or uri == "none":
        return None
    if uri.startswith("fixture:"):
        return FixtureSyncScorer(float(uri.split(":", 1)[1]))
    if uri.startswith("http://") or uri.startswith("https://"):
        return RemoteSyncScorer(uri)
    raise ValueError(f"unknown sync scorer uri {uri!r}")


def sync_score(frames, audio_track, scorer=None):
    """Delegates to the plugged scorer; with none configured the result is the
    UNAVAILABLE sentinel, never a made-up number."""
    if scorer is None:
        return UNAVAILABLE
    return float(scorer.score(frames, audio_track))
