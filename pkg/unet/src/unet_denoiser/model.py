"""Residual U-Net over shot-channel stacks.

The network predicts a correction field: its output has the same shape as
its input, and the denoised stack is input + output.  An encoder halves the
grid with max pooling at each of levels-1 steps while doubling the filter
count from base_filters, so level l carries base_filters * 2**(l-1)
filters; the decoder mirrors this with nearest-neighbour upsampling
followed by convolution, concatenating the matching encoder activation at
each level.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError

__all__ = ["NetSpec", "ResidualUNet", "build_net"]


@dataclass(frozen=True)
class NetSpec:
    levels: int = 5
    base_filters: int = 64
    kernel_size: int = 3
    dropout: float = 0.05
    batch_norm: bool = True
    negative_slope: float = 0.01
    mode: str = "complex"  # complex: 2*N_s channels; magnitude: N_s channels
    shots: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be at least 1, got {self.levels}")
        if self.base_filters < 1:
            raise ConfigError(f"base_filters must be positive, got {self.base_filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.mode not in ("complex", "magnitude"):
            raise ConfigError(f"mode must be 'complex' or 'magnitude', got {self.mode!r}")
        if self.shots < 1:
            raise ConfigError(f"shots must be positive, got {self.shots}")

    def filters_at(self, level: int) -> int:
        """Filter count at encoder level ``level`` (1-based): base * 2**(level-1)."""
        if not 1 <= level <= self.levels:
            raise ValueError(f"level must be in 1..{self.levels}, got {level}")
        return self.base_filters * 2 ** (level - 1)

    @property
    def channels(self) -> int:
        return 2 * self.shots if self.mode == "complex" else self.shots

    @property
    def min_size(self) -> int:
        """Smallest input side the pooling ladder divides cleanly."""
        return 2 ** (self.levels - 1)


def _conv_block(c_in: int, c_out: int, spec: NetSpec) -> nn.Sequential:
    k, pad = spec.kernel_size, spec.kernel_size // 2
    layers: list[nn.Module] = []
    for cin in (c_in, c_out):
        layers.append(nn.Conv2d(cin, c_out, k, padding=pad))
        if spec.batch_norm:
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(nn.LeakyReLU(spec.negative_slope, inplace=True))
        if spec.dropout > 0:
            layers.append(nn.Dropout2d(spec.dropout))
    return nn.Sequential(*layers)


class ResidualUNet(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        c = spec.channels
        self.encoders = nn.ModuleList()
        for lvl in range(1, spec.levels + 1):
            f = spec.filters_at(lvl)
            self.encoders.append(_conv_block(c if lvl == 1 else spec.filters_at(lvl - 1), f, spec))
        self.pool = nn.MaxPool2d(2)
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for lvl in range(spec.levels - 1, 0, -1):
            f = spec.filters_at(lvl)
            self.upsamplers.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(spec.filters_at(lvl + 1), f, spec.kernel_size, padding=spec.kernel_size // 2),
                )
            )
            # skip connection doubles the channel count going into the block
            self.decoders.append(_conv_block(2 * f, f, spec))
        self.head = nn.Conv2d(spec.filters_at(1), c, spec.kernel_size, padding=spec.kernel_size // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spec = self.spec
        if x.shape[-2] % spec.min_size or x.shape[-1] % spec.min_size:
            raise ValueError(
                f"spatial size {tuple(x.shape[-2:])} must be divisible by {spec.min_size} "
                f"for {spec.levels} levels"
            )
        skips = []
        for lvl, enc in enumerate(self.encoders, start=1):
            x = enc(x)
            if lvl < spec.levels:
                skips.append(x)
                x = self.pool(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([skip, x], dim=1))
        return self.head(x)


def build_net(spec: NetSpec) -> ResidualUNet:
    return ResidualUNet(spec)
