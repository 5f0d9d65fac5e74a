"""Detail refinement: a single residual-in-residual dense block predicting an
image residual, blended as I_f = clamp(I_r + omega * residual).

omega is a render-time knob: 0 short-circuits to the raw render (bit-exact),
1 is the training operating point. The exit convolution starts at zero so a
fresh network is an exact identity blend.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


class ResidualDenseBlock(nn.Module):
    """5 densely connected 3x3 convs; the last projects back to nf channels."""

    def __init__(self, nf: int, gc: int):
        super().__init__()
        self.convs = nn.ModuleList(
            [nn.Conv2d(nf + i * gc, gc, 3, 1, 1) for i in range(4)]
        )
        self.conv_out = nn.Conv2d(nf + 4 * gc, nf, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=False)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        return self.conv_out(torch.cat(feats, dim=1))


class RRDB(nn.Module):
    def __init__(self, nf: int, gc: int, beta: float = 0.2):
        super().__init__()
        self.blocks = nn.ModuleList([ResidualDenseBlock(nf, gc) for _ in range(3)])
        self.beta = beta

    def forward(self, x):
        out = x
        for block in self.blocks:
            out = out + self.beta * block(out)
        return x + self.beta * out


class RefineNet(nn.Module):
    def __init__(self, nf: int = 16, gc: int = 8, beta: float = 0.2,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.nf, self.gc, self.beta = nf, gc, beta
        self.entry = nn.Conv2d(3, nf, 3, 1, 1)
        self.body = RRDB(nf, gc, beta)
        self.exit = nn.Conv2d(nf, 3, 3, 1, 1)
        if generator is not None:
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * 9
                    bd = 1.0 / fan_in**0.5
                    m.weight.data.uniform_(-bd, bd, generator=generator)
                    m.bias.data.uniform_(-bd, bd, generator=generator)
        nn.init.zeros_(self.exit.weight)
        nn.init.zeros_(self.exit.bias)

    def forward(self, x):
        return self.exit(self.body(self.entry(x)))

    def serialized_bytes(self) -> int:
        return sum(p.numel() * 4 for p in self.parameters())


def refine_residual(net: RefineNet, image: torch.Tensor) -> torch.Tensor:
    """image: (h, w, 3) in [0, 1] -> residual (h, w, 3), unbounded range."""
    if image.dim() != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {tuple(image.shape)}")
    nchw = image.permute(2, 0, 1).unsqueeze(0)
    return net(nchw)[0].permute(1, 2, 0)


def blend(image: torch.Tensor, residual: torch.Tensor, omega: float) -> torch.Tensor:
    """Weighted residual blend, clamped to [0, 1] for display.

    omega == 0 returns the input tensor itself (no arithmetic, no drift)."""
    if omega == 0.0:
        return image
    if residual.shape != image.shape:
        raise ValueError(f"residual shape {tuple(residual.shape)} != image {tuple(image.shape)}")
    return torch.clamp(image + omega * residual, 0.0, 1.0)


def blend_unclamped(image: torch.Tensor, residual: torch.Tensor, omega: float) -> torch.Tensor:
    """Loss-side blend: keeps gradients alive outside [0, 1]."""
    if omega == 0.0:
        return image
    return image + omega * residual


def detail_sweep(net: RefineNet, image: torch.Tensor, omegas) -> list:
    """One blend per omega; omegas must be sorted ascending."""
    if any(b < a for a, b in zip(omegas, omegas[1:])):
        raise ValueError("omega list must be sorted ascending")
    with torch.no_grad():
        residual = refine_residual(net, image)
        return [blend(image, residual, float(w)) for w in omegas]


def refine_sections(net: RefineNet, prefix: str = "refine") -> dict:
    """Named parameter arrays for the checkpoint container."""
    return {
        f"{prefix}/{name}": p.detach().numpy().astype(np.float32)
        for name, p in net.named_parameters()
    }


def load_refine_sections(net: RefineNet, sections: dict, prefix: str = "refine"):
    with torch.no_grad():
        for name, p in net.named_parameters():
            key = f"{prefix}/{name}"
            p.copy_(torch.from_numpy(sections[key].reshape(p.shape)))
