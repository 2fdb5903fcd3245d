"""Feature fusion gates: CFF (per-position weights) and GCFF (per-channel weights).

Both gates fuse two equally-shaped maps as ``w * a + (1 - w) * b`` with
``w`` in (0, 1), so every output element lies between the two inputs.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class _GateMLP(nn.Module):
    """1x1 conv -> BN -> ReLU -> 1x1 conv -> BN -> sigmoid, width preserved."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return torch.sigmoid(self.bn2(self.conv2(x)))


def _check_pair(fa, fb):
    if fa.shape != fb.shape:
        raise ValueError(f"fusion inputs must match, got {tuple(fa.shape)} and {tuple(fb.shape)}")


class CFF(nn.Module):
    """Channel feature fusion with a spatially varying gate."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gate = _GateMLP(channels)

    def weights(self, fa, fb):
        return self.gate(fa + fb)

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        w = self.weights(fa, fb)
        return w * fa + (1 - w) * fb


class GCFF(nn.Module):
    """Global channel feature fusion: one gate value per channel from GAP(a + b)."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gate = _GateMLP(channels)

    def weights(self, fa, fb):
        m = (fa + fb).mean(dim=(-2, -1), keepdim=True)
        return self.gate(m)

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        w = self.weights(fa, fb)
        return w * fa + (1 - w) * fb


class AddFusion(nn.Module):
    """Parameter-free element-wise sum, the fusion used when gates are ablated."""

    def forward(self, fa, fb):
        _check_pair(fa, fb)
        return fa + fb


def _batched(fn, fa, fb):
    if fa.dim() == 3:
        return fn(fa.unsqueeze(0), fb.unsqueeze(0))[0]
    return fn(fa, fb)


def cff(fa: torch.Tensor, fb: torch.Tensor, module: CFF) -> torch.Tensor:
    _check_pair(fa, fb)
    return _batched(module, fa, fb)


def gcff(fa: torch.Tensor, fb: torch.Tensor, module: GCFF) -> torch.Tensor:
    _check_pair(fa, fb)
    return _batched(module, fa, fb)
