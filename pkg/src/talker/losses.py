"""The training loss stack.

The raw render is supervised for structure (reconstruction MSE, lip-edge),
the refined image for texture (perceptual, style, adversarial at the feature
level). Published weights: rec 1, pcp 0.001, style 10, adv 0.01, lip 0.1.
L1 feature norms are implemented as element means so the weights stay
resolution-independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import torch
import torch.nn as nn
import torch.nn.functional as F


class TrainingAbort(RuntimeError):
    """A loss term went non-finite; the message names it."""


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    pcp: float = 0.001
    style: float = 10.0
    adv: float = 0.01
    lip: float = 0.1

    def __post_init__(self):
        for name in ("rec", "pcp", "style", "adv", "lip"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def _nchw(img: torch.Tensor) -> torch.Tensor:
    if img.dim() != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {tuple(img.shape)}")
    return img.permute(2, 0, 1).unsqueeze(0)


def _forward_diffs(img: torch.Tensor):
    """Per-axis forward differences, channel-summed |.|, zero-padded at the
    trailing border. img: (h, w, c) -> (ex, ey) each (h, w)."""
    dx = (img[:, 1:, :] - img[:, :-1, :]).abs().sum(dim=2)
    dy = (img[1:, :, :] - img[:-1, :, :]).abs().sum(dim=2)
    ex = F.pad(dx, (0, 1))
    ey = F.pad(dy.unsqueeze(0), (0, 0, 0, 1)).squeeze(0)
    return ex, ey


def lip_edge_loss(rendered: torch.Tensor, original: torch.Tensor,
                  mask: torch.Tensor) -> torch.Tensor:
    """Masked edge consistency: rendered gradients are damped wherever the
    original image had edges, and penalized where it was smooth.

    Mean over mask support of sum_axis |grad rendered| * M * exp(-|grad
    original| * M). Empty mask returns 0 with a warning.
    """
    if rendered.shape != original.shape or mask.shape != rendered.shape[:2]:
        raise ValueError("lip_edge_loss shapes disagree")
    m = mask.to(rendered.dtype)
    support = m.sum()
    if float(support) == 0.0:
        warnings.warn("lip_edge_loss: empty mask, returning 0", RuntimeWarning)
        return rendered.sum() * 0.0
    rx, ry = _forward_diffs(rendered)
    ox, oy = _forward_diffs(original)
    term = rx * m * torch.exp(-ox * m) + ry * m * torch.exp(-oy * m)
    return term.sum() / support


def reconstruction_loss(rendered: torch.Tensor, edited: torch.Tensor) -> torch.Tensor:
    """MSE between the raw render and its edited supervision image."""
    if rendered.shape != edited.shape:
        raise ValueError(
            f"reconstruction shapes disagree: {tuple(rendered.shape)} vs {tuple(edited.shape)}"
        )
    return torch.mean((rendered - edited) ** 2)


def gram(features: torch.Tensor) -> torch.Tensor:
    """(h, w, c) feature map -> (c, c) Gram matrix normalized by h * w * c."""
    h, w, c = features.shape
    flat = features.reshape(h * w, c)
    return flat.t() @ flat / (h * w * c)


class ToyFeatureExtractor(nn.Module):
    """Two fixed random conv layers; deterministic, frozen, smooth (tanh)."""

    def __init__(self, seed: int = 0, channels: int = 8):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, channels, 3, 2, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 2, 1)
        for conv in (self.conv1, self.conv2):
            fan = conv.in_channels * 9
            conv.weight.data.normal_(0.0, fan**-0.5, generator=gen)
            conv.bias.data.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.layer_weights = [1.0, 1.0]

    def layer_names(self):
        return ["toy1", "toy2"]

    def forward(self, img: torch.Tensor) -> list:
        x = _nchw(img)
        f1 = torch.tanh(self.conv1(x))
        f2 = torch.tanh(self.conv2(f1))
        return [f1[0].permute(1, 2, 0), f2[0].permute(1, 2, 0)]


class IdentityFeatureExtractor(nn.Module):
    """Single layer returning the image itself; handy for hand oracles."""

    def __init__(self):
        super().__init__()
        self.layer_weights = [1.0]

    def layer_names(self):
        return ["identity"]

    def forward(self, img: torch.Tensor) -> list:
        return [img]


class VGGFeatureExtractor(nn.Module):
    """Pretrained-VGG features at the conventional relu1_2/relu2_2/relu3_3
    taps, weight 1 each. Requires torchvision weights to be available."""

    CUTS = (4, 9, 16)  # layer indices after the relu taps in vgg16.features

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16

            features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        except Exception as exc:  # pragma: no cover - depends on weight cache
            raise RuntimeError(
                "VGG feature extractor needs torchvision with downloaded "
                f"weights; fall back to the toy extractor offline ({exc})"
            ) from exc
        self.slices = nn.ModuleList()
        prev = 0
        for cut in self.CUTS:
            self.slices.append(nn.Sequential(*list(features[prev:cut])))
            prev = cut
        for p in self.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.layer_weights = [1.0, 1.0, 1.0]

    def layer_names(self):
        return ["relu1_2", "relu2_2", "relu3_3"]

    def forward(self, img: torch.Tensor) -> list:
        x = (_nchw(img) - self.mean) / self.std
        out = []
        for block in self.slices:
            x = block(x)
            out.append(x[0].permute(1, 2, 0))
        return out


def perceptual_loss(refined: torch.Tensor, edited: torch.Tensor, fx) -> torch.Tensor:
    """Weighted mean-|.| distance between extractor features."""
    fa = fx(refined)
    fb = fx(edited)
    total = refined.sum() * 0.0
    for w, a, b in zip(fx.layer_weights, fa, fb):
        if a.shape != b.shape:
            raise ValueError("feature extractor returned mismatched shapes")
        total = total + w * (a - b).abs().mean()
    return total


def style_loss(refined: torch.Tensor, edited: torch.Tensor, fx) -> torch.Tensor:
    """Weighted mean-|.| distance between feature Gram matrices."""
    fa = fx(refined)
    fb = fx(edited)
    total = refined.sum() * 0.0
    for w, a, b in zip(fx.layer_weights, fa, fb):
        total = total + w * (gram(a) - gram(b)).abs().mean()
    return total


class Discriminator(nn.Module):
    """4-layer strided patch classifier emitting a logit map."""

    def __init__(self, base: int = 16, generator: torch.Generator | None = None):
        super().__init__()
        chans = [3, base, base * 2, base * 4]
        convs = []
        for cin, cout in zip(chans, chans[1:]):
            convs += [nn.Conv2d(cin, cout, 4, 2, 1), nn.LeakyReLU(0.2)]
        self.features = nn.Sequential(*convs)
        self.head = nn.Conv2d(chans[-1], 1, 3, 1, 1)
        if generator is not None:
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    fan = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.data.uniform_(-(fan**-0.5), fan**-0.5, generator=generator)
                    m.bias.data.zero_()
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(_nchw(img)))


class AdversarialTrainer:
    """Owns the discriminator and its optimizer; single-owner during training."""

    def __init__(self, disc: Discriminator | None = None, lr: float = 2e-4,
                 generator: torch.Generator | None = None):
        self.disc = disc or Discriminator(generator=generator)
        self.opt = torch.optim.Adam(self.disc.parameters(), lr=lr, betas=(0.5, 0.999))

    def adversarial_step(self, refined: torch.Tensor, edited: torch.Tensor):
        """One discriminator update (real=edited, fake=refined detached), then
        the non-saturating generator loss on the live refined image."""
        real_logits = self.disc(edited.detach())
        fake_logits = self.disc(refined.detach())
        disc_loss = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
        if not torch.isfinite(disc_loss):
            raise TrainingAbort("discriminator loss became non-finite")
        self.opt.zero_grad()
        disc_loss.backward()
        self.opt.step()
        gen_loss = F.softplus(-self.disc(refined)).mean()
        if not torch.isfinite(gen_loss):
            raise TrainingAbort("adversarial generator loss became non-finite")
        return gen_loss, float(disc_loss.detach())


def combine_losses(components: dict, weights: LossWeights):
    """Eq.-style weighted sum; `components` maps term name -> scalar."""
    total = (
        weights.rec * components["rec"]
        + weights.pcp * components["pcp"]
        + weights.style * components["style"]
        + weights.adv * components["adv"]
    )
    if "lip" in components:
        total = total + weights.lip * components["lip"]
    return total


@dataclass
class LossBreakdown:
    total: torch.Tensor
    components: dict = dc_field(default_factory=dict)  # detached floats

    def named_values(self) -> dict:
        return dict(self.components)


def _check_finite(name: str, value: torch.Tensor):
    if not torch.isfinite(value):
        raise TrainingAbort(f"{name} loss became non-finite")


def total_loss(rendered: torch.Tensor, refined: torch.Tensor, edited: torch.Tensor,
               weights: LossWeights, fx, adv: AdversarialTrainer | None = None) -> LossBreakdown:
    """Main-phase objective: structure losses on the render, feature losses on
    the refined result."""
    terms = {
        "rec": reconstruction_loss(rendered, edited),
        "pcp": perceptual_loss(refined, edited, fx),
        "style": style_loss(refined, edited, fx),
    }
    if adv is not None:
        terms["adv"], _ = adv.adversarial_step(refined, edited)
    else:
        terms["adv"] = rendered.sum() * 0.0
    for name, value in terms.items():
        _check_finite(name, value)
    total = combine_losses(terms, weights)
    return LossBreakdown(total, {k: float(v.detach()) for k, v in terms.items()})


def finetune_loss(rendered: torch.Tensor, refined: torch.Tensor, edited: torch.Tensor,
                  original: torch.Tensor, lip_mask: torch.Tensor,
                  weights: LossWeights, fx, adv: AdversarialTrainer | None = None) -> LossBreakdown:
    """Fine-tune objective: the main loss plus the lip-edge term tying the
    render's lip edges to the original (pre-edit) frame."""
    base = total_loss(rendered, refined, edited, weights, fx, adv)
    lip = lip_edge_loss(rendered, original, lip_mask)
    _check_finite("lip", lip)
    total = base.total + weights.lip * lip
    comps = dict(base.components)
    comps["lip"] = float(lip.detach())
    return LossBreakdown(total, comps)
