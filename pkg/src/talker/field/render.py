"""Differentiable emission-absorption volume rendering, plus a no-grad fast
path for full-frame renders (numba grid encoders, sparse color evaluation).

Samples are midpoints of uniform segments between the per-ray entry/exit of
the scene cube (or the global near/far when clipping is off); training can
jitter sample positions within their segments. The last segment uses the same
delta as the rest, so sum(w) + T_final == 1 holds exactly up to float error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .grids import dense_encode_2d_nb, hash_encode_nb
from .model import FieldModel


class RenderError(ValueError):
    pass


@dataclass
class MarchConfig:
    n_samples: int = 24
    near: float = 0.5
    far: float = 3.5
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    clip_to_bound: float | None = 1.0  # per-ray AABB clip against [-b, b]^3
    jitter: bool = False
    ray_chunk: int = 512              # fast-path rays per chunk (keeps MLPs in cache)
    color_weight_floor: float = 1e-4  # fast path only

    def __post_init__(self):
        if self.near >= self.far:
            raise ValueError(f"near {self.near} must be below far {self.far}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")


@dataclass
class RenderOutput:
    color: torch.Tensor    # (h, w, 3) in [0, 1]
    opacity: torch.Tensor  # (h, w) accumulated alpha
    depth: torch.Tensor    # (h, w) expected termination depth


def ray_aabb_interval(origins, dirs, bound, near, far):
    """Clip [near, far] to the [-bound, bound]^3 slab intersection per ray.

    origins/dirs: (R, 3) tensors. Returns (t0, t1), each (R,); rays that miss
    the box come back with t1 == t0 (an empty interval).
    """
    inv = 1.0 / torch.where(dirs.abs() < 1e-12, torch.full_like(dirs, 1e-12), dirs)
    ta = (-bound - origins) * inv
    tb = (bound - origins) * inv
    tmin = torch.minimum(ta, tb).amax(dim=1)
    tmax = torch.maximum(ta, tb).amin(dim=1)
    t0 = torch.clamp(tmin, min=near)
    t1 = torch.clamp(tmax, max=far)
    t1 = torch.maximum(t0, t1)
    return t0, t1


def sample_depths(t0, t1, n, jitter=False, generator=None):
    """Midpoint (or jittered) sample depths and the per-ray segment length.

    Returns (t (R, n), delta (R,))."""
    r = t0.shape[0]
    delta = (t1 - t0) / n
    if jitter:
        u = torch.rand(r, n, generator=generator, dtype=t0.dtype)
    else:
        u = torch.full((r, n), 0.5, dtype=t0.dtype)
    steps = torch.arange(n, dtype=t0.dtype).unsqueeze(0)
    t = t0.unsqueeze(1) + (steps + u) * delta.unsqueeze(1)
    return t, delta


def composite(rgb, sigma, t, delta, t1, background):
    """Emission-absorption compositing.

    rgb: (R, n, 3), sigma: (R, n), t: (R, n), delta: (R,), background: (3,).
    Returns (color (R,3), opacity (R,), depth (R,)).
    """
    alpha = 1.0 - torch.exp(-sigma * delta.unsqueeze(1))
    trans = torch.cumprod(1.0 - alpha + 1e-12, dim=1)
    t_before = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
    weights = t_before * alpha  # (R, n)
    t_final = trans[:, -1]
    opacity = weights.sum(dim=1)
    color = (weights.unsqueeze(2) * rgb).sum(dim=1) + t_final.unsqueeze(1) * background
    depth = (weights * t).sum(dim=1) + t_final * t1
    return color, opacity, depth


def _check_rays(origins, dirs):
    norms = dirs.norm(dim=-1)
    if bool((norms < 1e-8).any()):
        raise RenderError("degenerate ray with near-zero direction")


def render_rays(field_fn, origins, dirs, a, e, i, march: MarchConfig,
                generator: torch.Generator | None = None):
    """Reference differentiable path.

    field_fn(x (M,3), a, e, i) -> (rgb (M,3), sigma (M,)); origins/dirs are
    (R, 3) tensors with unit-norm dirs. Returns (color, opacity, depth) flat.
    """
    origins = torch.as_tensor(origins, dtype=torch.float32) if not torch.is_tensor(origins) else origins
    dirs = torch.as_tensor(dirs, dtype=torch.float32) if not torch.is_tensor(dirs) else dirs
    _check_rays(origins, dirs)
    if march.clip_to_bound is not None:
        t0, t1 = ray_aabb_interval(origins, dirs, march.clip_to_bound, march.near, march.far)
    else:
        t0 = torch.full(origins.shape[:1], march.near, dtype=origins.dtype)
        t1 = torch.full(origins.shape[:1], march.far, dtype=origins.dtype)
    t, delta = sample_depths(t0, t1, march.n_samples, march.jitter, generator)
    pts = origins.unsqueeze(1) + dirs.unsqueeze(1) * t.unsqueeze(2)  # (R, n, 3)
    rgb, sigma = field_fn(pts.reshape(-1, 3), a, e, i)
    rgb = rgb.reshape(t.shape[0], march.n_samples, 3)
    sigma = sigma.reshape(t.shape[0], march.n_samples)
    bg = torch.as_tensor(march.background, dtype=origins.dtype)
    return composite(rgb, sigma, t, delta, t1, bg)


def render_patch(field_fn, rays, a, e, i, march: MarchConfig,
                 generator: torch.Generator | None = None) -> RenderOutput:
    """Render an (h, w) ray grid. rays: (origins, dirs), each (h, w, 3)."""
    origins, dirs = rays
    origins = torch.as_tensor(np.ascontiguousarray(origins), dtype=torch.float32)
    dirs = torch.as_tensor(np.ascontiguousarray(dirs), dtype=torch.float32)
    h, w = origins.shape[:2]
    color, opacity, depth = render_rays(
        field_fn, origins.reshape(-1, 3), dirs.reshape(-1, 3), a, e, i, march, generator
    )
    return RenderOutput(color.reshape(h, w, 3), opacity.reshape(h, w), depth.reshape(h, w))


# --- fast no-grad frame renderer -------------------------------------------


class FastFieldRenderer:
    """Full-frame renderer over a frozen FieldModel snapshot.

    Grid lookups run through numba kernels; the small MLPs run chunked under
    torch.no_grad; the color branch is only evaluated where the compositing
    weight clears march.color_weight_floor.
    """

    def __init__(self, model: FieldModel):
        self.model = model
        self.cfg = model.config
        tables, res, dense = model.spatial.export_arrays()
        self._sp_tables = tables
        self._sp_res = res
        self._sp_dense = dense
        self._audio_tables = model.audio_grid.export_arrays()

    def _encode_spatial(self, pts: np.ndarray) -> torch.Tensor:
        out = np.empty((pts.shape[0], self.model.spatial.output_dim), dtype=np.float32)
        hash_encode_nb(
            pts, self._sp_tables, self._sp_res, self._sp_dense,
            self.model.spatial.table_size, self.model.spatial.features_per_level,
            np.float32(self.cfg.bound), out,
        )
        return torch.from_numpy(out)

    def _encode_audio(self, xa: torch.Tensor) -> torch.Tensor:
        if self.cfg.audio_dim == 2:
            out = np.empty((xa.shape[0], self.cfg.audio_grid_features), dtype=np.float32)
            dense_encode_2d_nb(
                xa.numpy(), self._audio_tables,
                self.cfg.audio_grid_resolution, self.cfg.audio_grid_features, out,
            )
            return torch.from_numpy(out)
        return self.model.audio_grid(xa)

    def render_frame(self, rays, a: np.ndarray, e: float, i: int,
                     march: MarchConfig) -> RenderOutput:
        origins, dirs = rays
        h, w = origins.shape[:2]
        o = torch.from_numpy(np.ascontiguousarray(origins.reshape(-1, 3), dtype=np.float32))
        d = torch.from_numpy(np.ascontiguousarray(dirs.reshape(-1, 3), dtype=np.float32))
        _check_rays(o, d)
        m = self.model
        with torch.no_grad():
            a_t = torch.as_tensor(a, dtype=torch.float32)
            ap = m.audio_proj(a_t)
            app = m.appearance_vector(i)
            if march.clip_to_bound is not None:
                t0, t1 = ray_aabb_interval(o, d, march.clip_to_bound, march.near, march.far)
            else:
                t0 = torch.full((o.shape[0],), march.near)
                t1 = torch.full((o.shape[0],), march.far)
            colors, opacities, depths = [], [], []
            bg = torch.as_tensor(march.background, dtype=torch.float32)
            for s in range(0, o.shape[0], march.ray_chunk):
                sl = slice(s, s + march.ray_chunk)
                t, delta = sample_depths(t0[sl], t1[sl], march.n_samples)
                pts = (o[sl].unsqueeze(1) + d[sl].unsqueeze(1) * t.unsqueeze(2)).reshape(-1, 3)
                f = self._encode_spatial(pts.numpy())
                apx = ap.unsqueeze(0).expand(f.shape[0], -1)
                xa = torch.tanh(m.audio_mlp(torch.cat([apx, f], dim=1)))
                g = self._encode_audio(xa)
                ev = torch.full((f.shape[0], 1), float(e))
                appx = app.unsqueeze(0).expand(f.shape[0], -1)
                hfeat = m.trunk_out(m.trunk(torch.cat([f, g, ev, appx], dim=1)))
                sigma = torch.nn.functional.softplus(hfeat[:, 0]).reshape(t.shape)
                alpha = 1.0 - torch.exp(-sigma * delta.unsqueeze(1))
                trans = torch.cumprod(1.0 - alpha + 1e-12, dim=1)
                t_before = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
                weights = t_before * alpha
                keep = (weights > march.color_weight_floor).reshape(-1)
                rgb = torch.zeros(f.shape[0], 3)
                if bool(keep.any()):
                    geo = hfeat[keep][:, 1:]
                    rgb[keep] = torch.sigmoid(m.color_out(m.color_net(geo)))
                rgb = rgb.reshape(t.shape[0], march.n_samples, 3)
                t_final = trans[:, -1]
                opac = weights.sum(dim=1)
                colors.append((weights.unsqueeze(2) * rgb).sum(dim=1) + t_final.unsqueeze(1) * bg)
                opacities.append(opac)
                depths.append((weights * t).sum(dim=1) + t_final * t1[sl])
            color = torch.cat(colors).reshape(h, w, 3)
            opacity = torch.cat(opacities).reshape(h, w)
            depth = torch.cat(depths).reshape(h, w)
        return RenderOutput(color, opacity, depth)
