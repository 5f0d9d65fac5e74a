"""Multi-resolution interpolated grid encoders.

Two torch modules back the field: a 3D multi-level hash grid for spatial
features and a dense D-dim grid for the compressed audio coordinate. Both are
linear-interpolating and differentiable in their tables and in the query
point. A numba kernel mirrors the 3D forward for the no-grad render path.
"""

from __future__ import annotations

import math

import numba
import numpy as np
import torch
import torch.nn as nn

# xor-hash primes from the usual multiresolution hashing scheme; arithmetic is
# done in int32 with wraparound, which leaves the masked low bits unchanged.
_PRIME_Y = 2654435761
_PRIME_Z = 805459861
_PY32 = _PRIME_Y - 2**32
_PZ32 = _PRIME_Z


def level_resolutions(base: int, finest: int, levels: int) -> list[int]:
    if levels == 1:
        return [int(base)]
    b = math.exp((math.log(finest) - math.log(base)) / (levels - 1))
    return [int(base * b**l) for l in range(levels)]


class HashGridEncoder(nn.Module):
    """3D multi-level grid with per-level hashed (or dense, when it fits)
    vertex tables and trilinear interpolation.

    Query points are world coordinates in [-bound, bound]^3; points outside
    are clamped to the boundary rather than rejected.
    """

    def __init__(self, levels=6, base_resolution=16, max_resolution=128,
                 table_size=2**14, features_per_level=2, bound=1.0,
                 init_scale=1e-2, generator: torch.Generator | None = None):
        super().__init__()
        self.levels = levels
        self.table_size = table_size
        self.features_per_level = features_per_level
        self.bound = float(bound)
        self.resolutions = level_resolutions(base_resolution, max_resolution, levels)
        if any(b >= a for a, b in zip(self.resolutions[1:], self.resolutions)):
            raise ValueError(f"resolutions must be strictly increasing, got {self.resolutions}")
        init = torch.empty(levels * table_size, features_per_level)
        init.uniform_(-init_scale, init_scale, generator=generator)
        self.tables = nn.Parameter(init)
        # dense indexing when every vertex fits in the table (no collisions)
        self.dense_level = [(r + 1) ** 3 <= table_size for r in self.resolutions]

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def _corner_index(self, cx, cy, cz, level: int):
        # cx/cy/cz: int32 tensors of vertex coords at `level`
        r = self.resolutions[level]
        if self.dense_level[level]:
            return (cx * (r + 1) + cy) * (r + 1) + cz
        h = cx ^ (cy * _PY32) ^ (cz * _PZ32)
        return h & (self.table_size - 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (N, 3) world coords -> (N, levels * features_per_level)."""
        n = x.shape[0]
        unit = ((x.clamp(-self.bound, self.bound) + self.bound) / (2.0 * self.bound))
        out = x.new_zeros(n, self.output_dim)
        for l, r in enumerate(self.resolutions):
            xs = unit * r
            x0f = torch.clamp(xs.detach().floor(), max=r - 1)
            frac = xs - x0f  # keeps grad to x
            x0 = x0f.to(torch.int32)
            x1 = x0 + 1
            f0, f1, f2 = frac[:, 0], frac[:, 1], frac[:, 2]
            g0, g1, g2 = 1 - f0, 1 - f1, 1 - f2
            acc = None
            for c in range(8):
                bx, by, bz = c >> 2 & 1, c >> 1 & 1, c & 1
                idx = self._corner_index(
                    (x1 if bx else x0)[:, 0],
                    (x1 if by else x0)[:, 1],
                    (x1 if bz else x0)[:, 2],
                    l,
                ).long() + l * self.table_size
                w = (f0 if bx else g0) * (f1 if by else g1) * (f2 if bz else g2)
                feat = self.tables.index_select(0, idx) * w.unsqueeze(1)
                acc = feat if acc is None else acc + feat
            out[:, l * self.features_per_level:(l + 1) * self.features_per_level] = acc
        return out

    def vertex_feature(self, level: int, vertex: tuple) -> torch.Tensor:
        """Stored feature at an integer grid vertex (test/debug hook)."""
        cx, cy, cz = (torch.tensor([v], dtype=torch.int32) for v in vertex)
        idx = self._corner_index(cx, cy, cz, level).long() + level * self.table_size
        return self.tables[idx[0]]

    def export_arrays(self):
        """Numpy views used by the numba render path."""
        return (
            np.ascontiguousarray(self.tables.detach().numpy()),
            np.asarray(self.resolutions, dtype=np.int64),
            np.asarray(self.dense_level, dtype=np.bool_),
        )


class DenseGridEncoder(nn.Module):
    """Single-level dense grid over [-1, 1]^dim with multilinear interpolation.

    Used for the audio grid: the compressed audio coordinate (tanh-squashed)
    indexes a small dense table.
    """

    def __init__(self, dim=2, resolution=16, features=4, init_scale=1e-2,
                 generator: torch.Generator | None = None):
        super().__init__()
        if not 1 <= dim <= 3:
            raise ValueError(f"dense grid supports dim 1..3, got {dim}")
        self.dim = dim
        self.resolution = resolution
        self.features = features
        init = torch.empty((resolution + 1) ** dim, features)
        init.uniform_(-init_scale, init_scale, generator=generator)
        self.tables = nn.Parameter(init)

    @property
    def output_dim(self) -> int:
        return self.features

    def _flat_index(self, corners: list[torch.Tensor]):
        idx = corners[0]
        for c in corners[1:]:
            idx = idx * (self.resolution + 1) + c
        return idx

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (N, dim) in [-1, 1] -> (N, features)."""
        r = self.resolution
        xs = (x.clamp(-1.0, 1.0) + 1.0) / 2.0 * r
        x0f = torch.clamp(xs.detach().floor(), max=r - 1)
        frac = xs - x0f
        x0 = x0f.to(torch.int32)
        acc = None
        for c in range(2**self.dim):
            corners, w = [], None
            for d in range(self.dim):
                bit = (c >> (self.dim - 1 - d)) & 1
                corners.append(x0[:, d] + bit)
                wd = frac[:, d] if bit else 1 - frac[:, d]
                w = wd if w is None else w * wd
            idx = self._flat_index(corners).long()
            feat = self.tables.index_select(0, idx) * w.unsqueeze(1)
            acc = feat if acc is None else acc + feat
        return acc

    def vertex_feature(self, vertex: tuple) -> torch.Tensor:
        corners = [torch.tensor([v], dtype=torch.int32) for v in vertex]
        return self.tables[self._flat_index(corners).long()[0]]

    def export_arrays(self):
        return np.ascontiguousarray(self.tables.detach().numpy())


@numba.njit(cache=True)
def hash_encode_nb(x, tables, resolutions, dense, table_size, feat, bound, out):
    """Numba mirror of HashGridEncoder.forward (same corner order/arithmetic).

    x: (N, 3) float32, tables: (L*T, F) float32, out: (N, L*F) float32.
    """
    n = x.shape[0]
    levels = resolutions.shape[0]
    mask = table_size - 1
    for i in range(n):
        ux = (min(max(x[i, 0], -bound), bound) + bound) / (2.0 * bound)
        uy = (min(max(x[i, 1], -bound), bound) + bound) / (2.0 * bound)
        uz = (min(max(x[i, 2], -bound), bound) + bound) / (2.0 * bound)
        for l in range(levels):
            r = resolutions[l]
            fx = ux * r
            fy = uy * r
            fz = uz * r
            x0 = min(int(np.floor(fx)), r - 1)
            y0 = min(int(np.floor(fy)), r - 1)
            z0 = min(int(np.floor(fz)), r - 1)
            tx = fx - x0
            ty = fy - y0
            tz = fz - z0
            base = l * table_size
            for f in range(feat):
                out[i, l * feat + f] = 0.0
            for c in range(8):
                bx = (c >> 2) & 1
                by = (c >> 1) & 1
                bz = c & 1
                cx = x0 + bx
                cy = y0 + by
                cz = z0 + bz
                if dense[l]:
                    h = ((cx * (r + 1) + cy) * (r + 1) + cz) & mask
                else:
                    h = (cx ^ (cy * _PRIME_Y) ^ (cz * _PRIME_Z)) & mask
                w = (tx if bx else 1.0 - tx) * (ty if by else 1.0 - ty) * (tz if bz else 1.0 - tz)
                row = base + h
                for f in range(feat):
                    out[i, l * feat + f] += np.float32(w) * tables[row, f]
    return out


@numba.njit(cache=True)
def dense_encode_2d_nb(x, tables, resolution, feat, out):
    """Numba mirror of DenseGridEncoder.forward for dim=2."""
    n = x.shape[0]
    r = resolution
    for i in range(n):
        fx = (min(max(x[i, 0], -1.0), 1.0) + 1.0) / 2.0 * r
        fy = (min(max(x[i, 1], -1.0), 1.0) + 1.0) / 2.0 * r
        x0 = min(int(np.floor(fx)), r - 1)
        y0 = min(int(np.floor(fy)), r - 1)
        tx = fx - x0
        ty = fy - y0
        i00 = x0 * (r + 1) + y0
        for f in range(feat):
            out[i, f] = (
                np.float32((1 - tx) * (1 - ty)) * tables[i00, f]
                + np.float32((1 - tx) * ty) * tables[i00 + 1, f]
                + np.float32(tx * (1 - ty)) * tables[i00 + r + 1, f]
                + np.float32(tx * ty) * tables[i00 + r + 2, f]
            )
    return out
