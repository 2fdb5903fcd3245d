"""Single-branch convolutional encoder producing skip features F_0..F_4."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by BN and an activation.

    ``final_activation=False`` drops BN and activation after the second
    convolution, which is how the image-space heads emit signed residuals.
    """

    def __init__(self, in_ch: int, out_ch: int, activation: str = "relu",
                 leaky_slope: float = 0.01, final_activation: bool = True):
        super().__init__()
        if activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_ch
        self.out_channels = out_ch
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.final_activation = final_activation
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch, momentum=0.1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch, momentum=0.1) if final_activation else None

    def act(self, x):
        if self.activation == "relu":
            return F.relu(x)
        return F.leaky_relu(x, self.leaky_slope)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"conv block expects {self.in_channels} input channels, got {x.shape[1]}")
        x = self.act(self.bn1(self.conv1(x)))
        x = self.conv2(x)
        if self.final_activation:
            x = self.act(self.bn2(x))
        return x


def conv_block(x: torch.Tensor, block: ConvBlock, activation: str | None = None) -> torch.Tensor:
    """Apply ``block`` to ``x``, optionally overriding its activation."""
    if activation is not None and activation != block.activation:
        saved = block.activation
        block.activation = activation
        try:
            return block(x)
        finally:
            block.activation = saved
    return block(x)


class Encoder(nn.Module):
    """Five conv blocks; stage i >= 1 max-pools its input by 2 before convolving."""

    def __init__(self, channels, in_channels: int = 3):
        super().__init__()
        chans = [in_channels, *channels]
        self.stages = nn.ModuleList(
            ConvBlock(chans[i], chans[i + 1], activation="relu") for i in range(len(channels))
        )

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.stages) - 1)

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        h, w = image.shape[-2:]
        k = self.downsample_factor
        if h % k or w % k:
            raise ValueError(f"input size {h}x{w} is not divisible by {k}")
        feats = []
        x = image
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = F.max_pool2d(x, 2, 2)
            x = stage(x)
            feats.append(x)
        return feats


def encode(image: torch.Tensor, encoder: Encoder) -> list[torch.Tensor]:
    """Return ``[F_0, ..., F_4]``; accepts ``[3,H,W]`` or batched input."""
    if image.dim() == 3:
        return [f[0] for f in encoder(image.unsqueeze(0))]
    return encoder(image)
