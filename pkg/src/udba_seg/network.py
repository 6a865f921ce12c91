"""Dual-decoder U-net with uncertainty-driven bottleneck attention.

One shared encoder ends in a bottleneck; two structurally identical
decoders read it. The main decoder sees the bottleneck as-is, the
auxiliary decoder sees a noise-perturbed copy (shared skip connections,
unperturbed). With attention enabled, the two pass-1 outputs are turned
into an attention map that multiplies the bottleneck, and the main
decoder runs a second time on the attended features; that second pass
is the network's prediction.

GroupNorm(1, C) is used instead of BatchNorm: training runs at batch
size 1 and eval must behave identically to train.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import (
    ConfidenceBundle,
    apply_attention,
    confidence_bundle,
    project_to_bottleneck,
)
from .exceptions import ConfigurationError
from .validation import check_divisible_size

NOISE_LO = -0.3
NOISE_HI = 0.3


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 1
    num_classes: int = 2
    depth: int = 4
    base_channels: int = 32

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigurationError(
                f"base_channels must be >= 1, got {self.base_channels}"
            )
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def bottleneck_channels(self):
        return self.base_channels * 2 ** self.depth


@dataclass
class ModelOutput:
    main_pass1: torch.Tensor            # [B,N,H,W]
    aux: torch.Tensor                   # [B,N,H,W]
    main_final: torch.Tensor            # [B,N,H,W]
    confidence: Optional[ConfidenceBundle] = None

    @property
    def attention(self):
        return None if self.confidence is None else self.confidence.attention


def feature_noise(z, generator=None):
    """Elementwise uniform noise over z's shape, n ~ U(-0.3, 0.3)."""
    return torch.empty_like(z).uniform_(NOISE_LO, NOISE_HI, generator=generator)


def perturb_features(z, generator=None, noise=None):
    """z + z * n. Gradient flows through both the identity and the product."""
    if noise is None:
        noise = feature_noise(z, generator)
    return z + z * noise


class ConvBlock(nn.Module):
    """Two 3x3 conv + GroupNorm + ReLU stages."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.GroupNorm(1, out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.GroupNorm(1, out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class UpBlock(nn.Module):
    """1x1 channel reduce, bilinear 2x upsample, skip concat, ConvBlock."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.reduce = nn.Conv2d(in_ch, out_ch, 1)
        self.block = ConvBlock(2 * out_ch, out_ch)

    def forward(self, x, skip):
        x = self.reduce(x)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=True)
        return self.block(torch.cat([x, skip], dim=1))


class Decoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        ch = [config.base_channels * 2 ** l for l in range(config.depth + 1)]
        self.ups = nn.ModuleList(
            UpBlock(ch[l + 1], ch[l]) for l in reversed(range(config.depth))
        )
        self.head = nn.Conv2d(ch[0], config.num_classes, 1)

    def forward(self, z, skips):
        h = z
        for up, skip in zip(self.ups, reversed(skips)):
            h = up(h, skip)
        return self.head(h)


class DualDecoderNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        ch = [config.base_channels * 2 ** l for l in range(config.depth + 1)]
        self.enc = nn.ModuleList()
        in_ch = config.in_channels
        for l in range(config.depth):
            self.enc.append(ConvBlock(in_ch, ch[l]))
            in_ch = ch[l]
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(ch[-2], ch[-1])
        self.dec_main = Decoder(config)
        self.dec_aux = Decoder(config)

    def encode(self, x):
        """Returns (bottleneck z, list of per-level skip features)."""
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        return self.bottleneck(h), skips

    def forward(self, x, udba=False, generator=None, noise=None):
        check_divisible_size(x.shape[-2], x.shape[-1], self.config.depth)
        z, skips = self.encode(x)
        main_pass1 = self.dec_main(z, skips)
        aux = self.dec_aux(perturb_features(z, generator, noise), skips)
        if not udba:
            return ModelOutput(main_pass1, aux, main_pass1)
        # attention is built from detached outputs: the network must fix
        # its segmentation, not inflate its own gating signal
        bundle = confidence_bundle(main_pass1.detach(), aux.detach())
        att_proj = project_to_bottleneck(bundle.attention, z.shape[1:])
        main_final = self.dec_main(apply_attention(z, att_proj), skips)
        return ModelOutput(main_pass1, aux, main_final, bundle)


def build_network(config, seed=0):
    """Construct a DualDecoderNet with seed-deterministic initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = DualDecoderNet(config)
    return net
