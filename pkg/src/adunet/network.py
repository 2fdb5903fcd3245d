"""Full network: encoder, four decoder blocks, two image-space heads, residual composition."""

from __future__ import annotations

import math
from collections import OrderedDict

import torch
import torch.nn as nn

from .adb import ADB0, ADBj
from .checkpoint import ParameterStore
from .config import NetworkConfig
from .encoder import ConvBlock, Encoder


class ADUNet(nn.Module):
    """Encoder plus asymmetric dual decoder.

    ``forward`` returns ``(y_raw, yc, ys)`` where ``y_raw = x - yc - ys`` is
    left unclamped; ``ys`` is all zeros in single-decoder mode.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.encoder_channels)
        self.adb0 = ADB0(config)
        self.adbs = nn.ModuleList(ADBj(config, j) for j in (1, 2, 3))
        head = dict(activation="leaky_relu", leaky_slope=config.leaky_slope, final_activation=False)
        self.conv5_c = ConvBlock(config.adb_channels[3], 3, **head)
        self.conv5_s = ConvBlock(config.adb_channels[3], 3, **head) if config.dual else None
        init_parameters(self, config.seed)

    def forward(self, x: torch.Tensor, trace: dict | None = None):
        feats = self.encoder(x)
        zc, zs = self.adb0(feats[3], feats[4], trace)
        if trace is not None:
            for i, f in enumerate(feats):
                trace[f"F{i}"] = f
            trace["Z0.c"], trace["Z0.s"] = zc, zs
        for j, block in enumerate(self.adbs, start=1):
            zc, zs = block(zc, zs, feats[3 - j], trace)
            if trace is not None:
                trace[f"Z{j}.c"], trace[f"Z{j}.s"] = zc, zs
        yc = self.conv5_c(zc)
        ys = self.conv5_s(zs) if self.conv5_s is not None else torch.zeros_like(yc)
        y = x - yc - ys
        return y, yc, ys

    def to_store(self) -> ParameterStore:
        return ParameterStore.from_module(self, self.config)

    def load_store(self, store: ParameterStore) -> ADUNet:
        if store.config_hash != self.config.hash():
            raise ValueError(
                f"parameter store was built for config {store.config_hash}, network is {self.config.hash()}"
            )
        store.load_into(self)
        return self


@torch.no_grad()
def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic fan-in scaled init: He-normal convs, 1/sqrt(fan_in) linears, zero biases.

    The last convolution of each image-space head is zeroed instead.
    """
    gen = torch.Generator().manual_seed(int(seed))
    for name, module in model.named_modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
            if module.bias is not None:
                module.bias.zero_()
        elif isinstance(module, nn.Linear):
            std = math.sqrt(1.0 / module.in_features)
            module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
            if module.bias is not None:
                module.bias.zero_()
        elif isinstance(module, (nn.BatchNorm2d, nn.LayerNorm)):
            module.weight.fill_(1.0)
            module.bias.zero_()
            if isinstance(module, nn.BatchNorm2d):
                module.reset_running_stats()
    for name, p in model.named_parameters():
        if name.endswith("relative_position_bias_table"):
            p.zero_()
    # heads start at zero residual so the untrained network is the identity map
    for head in (getattr(model, "conv5_c", None), getattr(model, "conv5_s", None)):
        if head is not None:
            head.conv2.weight.zero_()


def build_model(config: NetworkConfig, store: ParameterStore | None = None) -> ADUNet:
    model = ADUNet(config)
    if store is not None:
        model.load_store(store)
    return model


def forward(image: torch.Tensor, params: ParameterStore, config: NetworkConfig):
    """Eval-mode restoration of one ``[3,H,W]`` image (or a batch).

    Returns ``(y, yc, ys)`` with ``y`` clamped to [0, 1] and the residuals raw.
    """
    model = build_model(config, params).eval()
    squeeze = image.dim() == 3
    x = image.unsqueeze(0) if squeeze else image
    with torch.no_grad():
        y, yc, ys = model(x.to(next(model.parameters()).dtype))
    y = y.clamp(0, 1)
    if squeeze:
        return y[0], yc[0], ys[0]
    return y, yc, ys


# -- parameter accounting ---------------------------------------------------

def _category(module_name: str, param_name: str, module: nn.Module) -> str:
    if isinstance(module, nn.Conv2d):
        return "conv3x3" if module.kernel_size == (3, 3) else "fusion"
    if isinstance(module, nn.BatchNorm2d):
        return "fusion" if ".fusion." in f".{module_name}." else "batchnorm"
    return "attention"


def _group(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "encoder":
        return f"encoder.conv{parts[2]}"
    if parts[0] == "adbs":
        return f"adb{int(parts[1]) + 1}"
    return parts[0]


def parameter_breakdown(model: ADUNet) -> dict:
    """Per-block and per-category learnable scalar counts."""
    modules = dict(model.named_modules())
    by_block: OrderedDict[str, int] = OrderedDict()
    by_category: OrderedDict[str, int] = OrderedDict(
        (k, 0) for k in ("conv3x3", "batchnorm", "fusion", "attention")
    )
    for name, p in model.named_parameters():
        mod_name, _, pname = name.rpartition(".")
        cat = _category(mod_name, pname, modules[mod_name])
        by_block[_group(name)] = by_block.get(_group(name), 0) + p.numel()
        by_category[cat] += p.numel()
    total = sum(by_block.values())
    return {"total": total, "blocks": dict(by_block), "categories": dict(by_category)}


def count_parameters(config: NetworkConfig) -> tuple[int, dict]:
    """Total learnable scalars and the breakdown table for ``config``."""
    table = parameter_breakdown(ADUNet(config))
    return table["total"], table
