"""The talking radiance field.

A point query runs: spatial hash-grid features f, audio features compressed to
a low-dim coordinate x_a = mlp(a, f) and looked up in a dense audio grid to
give g, then a head that maps (f, g, eye, appearance) to density and color.
Density uses softplus, color sigmoid, so sigma >= 0 and rgb in [0,1] hold by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .grids import DenseGridEncoder, HashGridEncoder


@dataclass
class FieldConfig:
    spatial_levels: int = 6
    base_resolution: int = 16
    max_resolution: int = 128
    table_size: int = 2**14
    features_per_level: int = 2
    audio_feature_dim: int = 8     # length A of the ingested audio vectors
    audio_proj_dim: int = 4        # per-frame audio projection, computed once
    audio_dim: int = 2             # D, dimensionality of the audio coordinate
    audio_grid_resolution: int = 16
    audio_grid_features: int = 4
    head_width: int = 64
    head_depth: int = 1            # hidden layers in the density trunk
    geo_features: int = 16         # trunk features handed to the color branch
    appearance_count: int = 4
    appearance_dim: int = 4
    bound: float = 1.0

    def __post_init__(self):
        if self.audio_dim < 1:
            raise ValueError("audio_dim must be >= 1")
        if self.bound <= 0:
            raise ValueError("bound must be positive")
        if self.base_resolution >= self.max_resolution and self.spatial_levels > 1:
            raise ValueError("base_resolution must be below max_resolution")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "FieldConfig":
        return FieldConfig(**d)


class FieldModel(nn.Module):
    def __init__(self, config: FieldConfig, generator: torch.Generator | None = None,
                 zero_init_heads: bool = True):
        super().__init__()
        self.config = config
        gen = generator
        self.spatial = HashGridEncoder(
            levels=config.spatial_levels,
            base_resolution=config.base_resolution,
            max_resolution=config.max_resolution,
            table_size=config.table_size,
            features_per_level=config.features_per_level,
            bound=config.bound,
            generator=gen,
        )
        f_dim = self.spatial.output_dim
        self.audio_proj = nn.Linear(config.audio_feature_dim, config.audio_proj_dim)
        self.audio_mlp = nn.Sequential(
            nn.Linear(config.audio_proj_dim + f_dim, 32),
            nn.SiLU(),
            nn.Linear(32, config.audio_dim),
        )
        self.audio_grid = DenseGridEncoder(
            dim=config.audio_dim,
            resolution=config.audio_grid_resolution,
            features=config.audio_grid_features,
            generator=gen,
        )
        self.appearance = nn.Embedding(config.appearance_count, config.appearance_dim)
        trunk_in = f_dim + config.audio_grid_features + 1 + config.appearance_dim
        layers: list[nn.Module] = [nn.Linear(trunk_in, config.head_width), nn.SiLU()]
        for _ in range(config.head_depth - 1):
            layers += [nn.Linear(config.head_width, config.head_width), nn.SiLU()]
        self.trunk = nn.Sequential(*layers)
        self.trunk_out = nn.Linear(config.head_width, 1 + config.geo_features)
        self.color_net = nn.Sequential(
            nn.Linear(config.geo_features, config.head_width),
            nn.SiLU(),
        )
        self.color_out = nn.Linear(config.head_width, 3)
        self._reseed_linear_layers(gen)
        if zero_init_heads:
            nn.init.zeros_(self.trunk_out.weight)
            nn.init.zeros_(self.trunk_out.bias)
            nn.init.zeros_(self.color_out.weight)
            nn.init.zeros_(self.color_out.bias)

    def _reseed_linear_layers(self, generator):
        # nn.Linear seeds from global state; redo with the explicit generator
        # so model construction is reproducible without touching global seeds.
        if generator is None:
            return
        for m in self.modules():
            if isinstance(m, nn.Linear):
                fan_in = m.weight.shape[1]
                bd = 1.0 / fan_in**0.5
                m.weight.data.uniform_(-bd, bd, generator=generator)
                m.bias.data.uniform_(-bd, bd, generator=generator)
            elif isinstance(m, nn.Embedding):
                m.weight.data.normal_(0.0, 0.1, generator=generator)

    # --- encoder stages ----------------------------------------------------

    def encode_spatial(self, x: torch.Tensor) -> torch.Tensor:
        """x: (N, 3) world coords, clamped into the scene cube -> f (N, F)."""
        return self.spatial(x)

    def compress_audio(self, a: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        """(a, f) -> audio coordinate x_a in [-1, 1]^D."""
        ap = self.audio_proj(a)
        if ap.dim() == 1:
            ap = ap.unsqueeze(0).expand(f.shape[0], -1)
        return torch.tanh(self.audio_mlp(torch.cat([ap, f], dim=1)))

    def encode_audio(self, a: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
        """(a, f) -> audio grid features g (N, audio_grid_features)."""
        if a.shape[-1] != self.config.audio_feature_dim:
            raise ValueError(
                f"audio feature length {a.shape[-1]} != configured {self.config.audio_feature_dim}"
            )
        return self.audio_grid(self.compress_audio(a, f))

    def head(self, f, g, e, app):
        """Density trunk + color branch. e: (N,1), app: (N, appearance_dim)."""
        h = self.trunk_out(self.trunk(torch.cat([f, g, e, app], dim=1)))
        sigma = F.softplus(h[:, 0])
        geo = h[:, 1:]
        rgb = torch.sigmoid(self.color_out(self.color_net(geo)))
        return rgb, sigma

    def appearance_vector(self, i: int) -> torch.Tensor:
        if not 0 <= i < self.config.appearance_count:
            raise LookupError(
                f"appearance index {i} outside table of size {self.config.appearance_count}"
            )
        return self.appearance.weight[i]

    def query_points(self, x: torch.Tensor, a: torch.Tensor, e: float, i: int):
        """Full per-point query: (N,3) coords with per-frame (a, e, i).

        Returns (rgb (N,3) in [0,1], sigma (N,) >= 0), differentiable in x,
        a, and all parameters.
        """
        n = x.shape[0]
        f = self.encode_spatial(x)
        g = self.encode_audio(a, f)
        ev = torch.as_tensor(e, dtype=x.dtype).reshape(1, 1).expand(n, 1)
        app = self.appearance_vector(i).unsqueeze(0).expand(n, -1).to(x.dtype)
        return self.head(f, g, ev, app)


def query_field(model: FieldModel, x: torch.Tensor, a: torch.Tensor, e: float, i: int):
    """Single- or multi-point (c, sigma) query; accepts (3,) or (N, 3)."""
    single = x.dim() == 1
    pts = x.unsqueeze(0) if single else x
    rgb, sigma = model.query_points(pts, a, e, i)
    if single:
        return rgb[0], sigma[0]
    return rgb, sigma
