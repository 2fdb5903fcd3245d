"""SSIM / PSNR metrics and the training losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2
PSNR_CAP = 100.0


@dataclass
class Metrics:
    psnr: float
    ssim: float
    mse: float
    count: int

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "mse": self.mse, "count": self.count}


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def _as_batch(x):
    return x.unsqueeze(0) if x.dim() == 3 else x


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def ssim_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-pixel SSIM, Gaussian 11x11 window, zero padding to keep size."""
    _check(a, b)
    a, b = _as_batch(a), _as_batch(b)
    c = a.shape[1]
    win = gaussian_window(dtype=a.dtype).to(a.device).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)
    pad = SSIM_WINDOW // 2

    def blur(x):
        return F.conv2d(x, win, padding=pad, groups=c)

    mu_a, mu_b = blur(a), blur(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(a * a) - mu_aa
    var_b = blur(b * b) - mu_bb
    cov = blur(a * b) - mu_ab
    num = (2 * mu_ab + C1) * (2 * cov + C2)
    den = (mu_aa + mu_bb + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM over pixels and channels (data range 1); differentiable."""
    return ssim_map(a, b).mean()


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check(a, b)
    return ((a - b) ** 2).mean()


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR in dB for peak 1.0, capped at 100 dB for identical inputs."""
    _check(a, b)
    err = float(((a.double() - b.double()) ** 2).mean())
    if err <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def loss(gt: torch.Tensor, y: torch.Tensor, mode: str = "ssim") -> torch.Tensor:
    _check(gt, y)
    if mode == "ssim":
        return -ssim(gt, y)
    if mode == "mse":
        return mse(gt, y)
    if mode == "ssim_plus_mse":
        return -ssim(gt, y) + mse(gt, y)
    raise ValueError(f"unknown loss mode {mode!r}")


def image_metrics(pred: torch.Tensor, gt: torch.Tensor) -> Metrics:
    """Metrics for a batch, averaged per image."""
    pred, gt = _as_batch(pred), _as_batch(gt)
    _check(pred, gt)
    p = [psnr(pred[i], gt[i]) for i in range(len(pred))]
    s = [float(ssim(pred[i], gt[i])) for i in range(len(pred))]
    m = [float(mse(pred[i], gt[i])) for i in range(len(pred))]
    n = len(pred)
    return Metrics(sum(p) / n, sum(s) / n, sum(m) / n, n)
