"""Asymmetric dual-decoder blocks.

ADB_0 fuses F_3 with the upsampled F_4. ADB_j (j >= 1) merges the previous
pair of latents, upsamples, and fuses each stream with the skip F_{3-j}.
The contamination stream runs CFF -> W-MSA -> Conv_out, the scene stream
GCFF -> SW-MSA -> Conv_out.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import WindowAttention
from .config import NetworkConfig
from .encoder import ConvBlock
from .fusion import CFF, GCFF, AddFusion


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    """Bilinear 2x upsampling (half-pixel centres)."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    y = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    return y[0] if squeeze else y


def branch_layout(config: NetworkConfig, stream: str) -> tuple[str, str]:
    """(fusion kind, attention kind) used by ``stream`` under the config's ablation switches."""
    fm, am = config.fusion_mode, config.attention_mode
    contamination = (
        "cff" if fm in ("cff_only", "asymmetric") else "add",
        "wmsa" if am in ("wmsa_only", "asymmetric") else "none",
    )
    if stream == "c" or config.decoder_mode == "dual_symmetric":
        return contamination
    return (
        "gcff" if fm in ("gcff_only", "asymmetric") else "add",
        "swmsa" if am in ("swmsa_only", "asymmetric") else "none",
    )


class Branch(nn.Module):
    """fusion -> attention -> Conv_out for one stream of one block."""

    def __init__(self, config: NetworkConfig, stream: str, channels: int, out_channels: int):
        super().__init__()
        fusion_kind, attn_kind = branch_layout(config, stream)
        self.fusion_kind, self.attention_kind = fusion_kind, attn_kind
        self.fusion = {"cff": CFF, "gcff": GCFF}.get(fusion_kind, lambda c: AddFusion())(channels)
        if attn_kind == "none":
            self.attention = nn.Identity()
        else:
            self.attention = WindowAttention(channels, config.num_heads, config.window_size,
                                             shifted=attn_kind == "swmsa")
        self.conv_out = ConvBlock(channels, out_channels, activation="leaky_relu",
                                  leaky_slope=config.leaky_slope)

    def forward(self, fa, fb, trace=None, tag=""):
        g = self.fusion(fa, fb)
        h = self.attention(g)
        z = self.conv_out(h)
        if trace is not None:
            trace[f"{tag}.fused"] = g
            trace[f"{tag}.attended"] = h
        return z


class ADB0(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        c3 = config.encoder_channels[3]
        out = config.adb_channels[0]
        self.streams = ("c", "s") if config.dual else ("c",)
        self.branch_c = Branch(config, "c", c3, out)
        self.branch_s = Branch(config, "s", c3, out) if config.dual else None

    def forward(self, f3, f4, trace=None):
        if f3.shape[1] != f4.shape[1]:
            raise ValueError(f"ADB_0 needs equal widths, got {f3.shape[1]} and {f4.shape[1]}")
        up = upsample2x(f4)
        if up.shape != f3.shape:
            raise ValueError(f"upsampled F4 {tuple(up.shape)} does not match F3 {tuple(f3.shape)}")
        zc = self.branch_c(f3, up, trace, "adb0.c")
        zs = self.branch_s(f3, up, trace, "adb0.s") if self.branch_s is not None else None
        return zc, zs


class ADBj(nn.Module):
    def __init__(self, config: NetworkConfig, j: int):
        super().__init__()
        self.j = j
        d_prev = config.adb_channels[j - 1]
        skip = config.encoder_channels[3 - j]
        out = config.adb_channels[j]
        merged = 2 * d_prev if config.dual else d_prev
        leaky = dict(activation="leaky_relu", leaky_slope=config.leaky_slope)
        self.conv_in_c = ConvBlock(merged, skip, **leaky)
        self.branch_c = Branch(config, "c", skip, out)
        if config.dual:
            self.conv_in_s = ConvBlock(merged, skip, **leaky)
            self.branch_s = Branch(config, "s", skip, out)
        else:
            self.conv_in_s = self.branch_s = None

    def forward(self, zc, zs, fskip, trace=None):
        if zs is not None and zs.shape != zc.shape:
            raise ValueError("ADB_j latents must share a shape")
        h, w = zc.shape[-2:]
        if tuple(fskip.shape[-2:]) != (2 * h, 2 * w):
            raise ValueError(
                f"skip feature is {tuple(fskip.shape[-2:])}, expected exactly 2x latent size {(2 * h, 2 * w)}"
            )
        merged = torch.cat([zc, zs], dim=1) if zs is not None else zc
        merged = upsample2x(merged)
        tag = f"adb{self.j}"
        zc_t = self.conv_in_c(merged)
        out_c = self.branch_c(zc_t, fskip, trace, f"{tag}.c")
        out_s = None
        if self.branch_s is not None:
            zs_t = self.conv_in_s(merged)
            out_s = self.branch_s(zs_t, fskip, trace, f"{tag}.s")
        if trace is not None:
            trace[f"{tag}.merged"] = merged
            trace[f"{tag}.c.conv_in"] = zc_t
            if out_s is not None:
                trace[f"{tag}.s.conv_in"] = zs_t
        return out_c, out_s


def _batched(fn, *xs):
    if xs[0].dim() == 3:
        outs = fn(*(x.unsqueeze(0) if x is not None else None for x in xs))
        return tuple(o[0] if o is not None else None for o in outs)
    return fn(*xs)


def adb0_forward(f3, f4, block: ADB0):
    return _batched(block, f3, f4)


def adbj_forward(zc, zs, fskip, block: ADBj):
    return _batched(block, zc, zs, fskip)
