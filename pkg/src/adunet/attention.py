"""Window multi-head self-attention (W-MSA) and its shifted variant (SW-MSA).

Each unit is ``x + MSA(LayerNorm(x))`` with no feed-forward sub-block.
Maps are channels-first ``[B, C, H, W]``; windows are token-major
``[num_windows * B, w*w, C]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class PadRecord:
    height: int
    width: int
    padded_height: int
    padded_width: int


def window_partition(x: torch.Tensor, window: int) -> tuple[torch.Tensor, PadRecord]:
    """Split a ``[B,C,H,W]`` (or ``[C,H,W]``) map into ``window x window`` token groups.

    The map is zero-padded on the bottom/right up to a multiple of ``window``.
    """
    if window < 1:
        raise ValueError("window size must be >= 1")
    if x.dim() == 3:
        x = x.unsqueeze(0)
    b, c, h, w = x.shape
    ph, pw = -h % window, -w % window
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    hp, wp = h + ph, w + pw
    x = x.view(b, c, hp // window, window, wp // window, window)
    windows = x.permute(0, 2, 4, 3, 5, 1).reshape(-1, window * window, c)
    return windows, PadRecord(h, w, hp, wp)


def window_reverse(windows: torch.Tensor, window: int, pad: PadRecord, batch: int | None = None) -> torch.Tensor:
    """Inverse of :func:`window_partition`; returns ``[B,C,H,W]`` cropped to the original size."""
    c = windows.shape[-1]
    nh, nw = pad.padded_height // window, pad.padded_width // window
    if batch is None:
        batch = windows.shape[0] // (nh * nw)
    x = windows.view(batch, nh, nw, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4).reshape(batch, c, pad.padded_height, pad.padded_width)
    return x[:, :, : pad.height, : pad.width]


def relative_position_index(window: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij"))
    flat = coords.flatten(1)
    rel = (flat[:, :, None] - flat[:, None, :]).permute(1, 2, 0)
    rel = rel + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


@lru_cache(maxsize=64)
def attention_mask(height: int, width: int, window: int, shift: int = 0) -> torch.Tensor | None:
    """Additive mask ``[num_windows, w*w, w*w]`` with 0 for allowed pairs and -inf otherwise.

    A key is blocked when it is zero padding or when the cyclic roll brought
    it into the window from a different region than the query. The diagonal
    is always open so no row is fully masked. Returns None when nothing needs
    masking.
    """
    hp, wp = height + (-height % window), width + (-width % window)
    if shift == 0 and (hp, wp) == (height, width):
        return None
    label = torch.zeros(1, 1, hp, wp)
    if shift > 0:
        bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
        n = 0
        for hs in bounds:
            for ws in bounds:
                label[:, :, hs, ws] = n
                n += 1
    valid = torch.zeros(1, 1, hp, wp)
    valid[:, :, :height, :width] = 1
    if shift > 0:
        valid = torch.roll(valid, shifts=(-shift, -shift), dims=(2, 3))
    groups, _ = window_partition(label, window)
    keep, _ = window_partition(valid, window)
    groups, keep = groups.squeeze(-1), keep.squeeze(-1)
    allowed = (groups[:, :, None] == groups[:, None, :]) & (keep[:, None, :] > 0)
    allowed |= torch.eye(groups.shape[1], dtype=torch.bool)
    mask = torch.zeros(allowed.shape)
    return mask.masked_fill(~allowed, float("-inf"))


class WindowAttention(nn.Module):
    """Pre-norm window self-attention with relative position bias and a residual path."""

    def __init__(self, channels: int, num_heads: int = 4, window: int = 8, shifted: bool = False):
        super().__init__()
        if channels % num_heads:
            raise ValueError(f"num_heads={num_heads} does not divide channels={channels}")
        self.channels = channels
        self.num_heads = num_heads
        self.window = window
        self.shifted = shifted
        self.head_dim = channels // num_heads
        self.scale = self.head_dim ** -0.5
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, num_heads))
        self.register_buffer("relative_position_index", relative_position_index(window), persistent=False)

    @property
    def shift(self) -> int:
        return self.window // 2 if self.shifted else 0

    def _attend(self, tokens, mask, batch, need_weights=False):
        n, t, c = tokens.shape
        nw = n // batch
        qkv = self.qkv(tokens).view(batch, nw, t, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(3, 0, 1, 4, 2, 5)  # each [B, nW, heads, t, d]
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        bias = bias.view(t, t, -1).permute(2, 0, 1)
        if mask is not None:
            bias = bias + mask[:, None].to(bias.dtype)
        logits = (q * self.scale) @ k.transpose(-2, -1) + bias
        attn = logits.softmax(dim=-1)
        out = attn @ v
        out = out.permute(0, 1, 3, 2, 4).reshape(n, t, c)
        return self.proj(out), attn.reshape(n, self.num_heads, t, t) if need_weights else None

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        b, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"attention expects {self.channels} channels, got {c}")
        y = self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        win = self.window
        ph, pw = -h % win, -w % win
        y = F.pad(y, (0, pw, 0, ph))
        hp, wp = h + ph, w + pw
        s = self.shift
        mask = attention_mask(h, w, win, s)
        if mask is not None:
            mask = mask.to(y.device)
        if s > 0:
            y = torch.roll(y, shifts=(-s, -s), dims=(2, 3))
        tokens, pad = window_partition(y, win)
        out, attn = self._attend(tokens, mask, b, need_weights=return_attention)
        y = window_reverse(out, win, PadRecord(hp, wp, hp, wp), batch=b)
        if s > 0:
            y = torch.roll(y, shifts=(s, s), dims=(2, 3))
        y = x + y[:, :, :h, :w]
        if squeeze:
            y = y[0]
        if return_attention:
            return y, attn
        return y


def wmsa(x: torch.Tensor, module: WindowAttention, window: int | None = None) -> torch.Tensor:
    _check_window(module, window)
    if module.shifted:
        raise ValueError("wmsa called with a shifted attention module")
    return module(x)


def swmsa(x: torch.Tensor, module: WindowAttention, window: int | None = None) -> torch.Tensor:
    _check_window(module, window)
    if not module.shifted:
        raise ValueError("swmsa called with a non-shifted attention module")
    return module(x)


def _check_window(module, window):
    if window is not None and window != module.window:
        raise ValueError(f"module built for window {module.window}, got {window}")
