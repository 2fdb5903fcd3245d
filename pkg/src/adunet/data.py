"""Paired contaminated/clean image data: directory loader, split, and a seeded synthetic generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError


class DatasetError(RuntimeError):
    pass


# -- synthetic contamination ---------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    height: int = 64
    width: int = 64
    beta_range: tuple[float, float] = (0.2, 1.0)
    airlight_range: tuple[float, float] = (0.6, 0.95)
    streak_count_range: tuple[int, int] = (15, 40)
    streak_length_range: tuple[float, float] = (8.0, 32.0)
    streak_width_range: tuple[int, int] = (1, 2)
    streak_angle_range: tuple[float, float] = (-20.0, 20.0)
    streak_intensity_range: tuple[float, float] = (0.15, 0.5)
    streak_blur_sigma: float = 0.7
    num_objects_range: tuple[int, int] = (3, 8)
    seed: int = 0

    def __post_init__(self):
        if min(self.beta_range) < 0 or self.beta_range[0] > self.beta_range[1]:
            raise ValueError("beta range must be non-negative and ordered")
        if not (0 <= self.airlight_range[0] <= self.airlight_range[1] <= 1):
            raise ValueError("airlight range must lie in [0, 1]")
        lo, hi = self.streak_angle_range
        if not (-90 < lo <= hi < 90):
            raise ValueError("streak angles must lie in (-90, 90) degrees")
        if self.streak_count_range[0] < 0 or self.streak_count_range[0] > self.streak_count_range[1]:
            raise ValueError("streak count range must be non-negative and ordered")
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas must be non-empty")

    def with_beta(self, beta: float) -> SynthParams:
        return replace(self, beta_range=(beta, beta))


def _smooth_field(rng, h, w, grid=3):
    """Random RGB field interpolated bilinearly from a coarse grid of colours."""
    coarse = rng.uniform(0.1, 0.9, size=(grid, grid, 3)).astype(np.float32)
    ys = np.linspace(0, grid - 1, h, dtype=np.float32)
    xs = np.linspace(0, grid - 1, w, dtype=np.float32)
    y0 = np.minimum(ys.astype(np.int64), grid - 2)
    x0 = np.minimum(xs.astype(np.int64), grid - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    top = c00 * (1 - fx) + c01 * fx
    bottom = c10 * (1 - fx) + c11 * fx
    return (top * (1 - fy) + bottom * fy).astype(np.float32)


def _scene(rng, p: SynthParams):
    h, w = p.height, p.width
    clean = _smooth_field(rng, h, w)
    rows = np.arange(h, dtype=np.float32)[:, None] / max(h - 1, 1)
    cols = np.arange(w, dtype=np.float32)[None, :] / max(w - 1, 1)
    tilt = np.float32(rng.uniform(-0.1, 0.1))
    depth = np.clip(1.0 - 0.8 * rows + tilt * (cols - 0.5), 0.0, 1.0).astype(np.float32)
    depth = np.broadcast_to(depth, (h, w)).copy()

    n_obj = int(rng.integers(p.num_objects_range[0], p.num_objects_range[1] + 1))
    objects = []
    for _ in range(n_obj):
        objects.append(dict(
            kind=int(rng.integers(0, 2)),
            cy=rng.uniform(0, h), cx=rng.uniform(0, w),
            ry=rng.uniform(0.08, 0.3) * h, rx=rng.uniform(0.08, 0.3) * w,
            depth=np.float32(rng.uniform(0.05, 0.9)),
            color=rng.uniform(0.0, 1.0, size=3).astype(np.float32),
            shade=np.float32(rng.uniform(-0.2, 0.2)),
        ))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    for obj in sorted(objects, key=lambda o: -o["depth"]):
        dy, dx = (yy - obj["cy"]) / obj["ry"], (xx - obj["cx"]) / obj["rx"]
        if obj["kind"] == 0:
            inside = (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
        else:
            inside = dy * dy + dx * dx <= 1
        shading = 1 + obj["shade"] * np.clip(dy, -1, 1)
        color = np.clip(obj["color"][None, None, :] * shading[..., None], 0, 1)
        clean = np.where(inside[..., None], color, clean)
        depth = np.where(inside, obj["depth"], depth)
    return clean.astype(np.float32), depth.astype(np.float32)


def _rain_layer(rng, p: SynthParams):
    h, w = p.height, p.width
    layer = np.zeros((h, w), dtype=np.float32)
    n = int(rng.integers(p.streak_count_range[0], p.streak_count_range[1] + 1))
    # one shared direction per image, per-streak jitter
    base = rng.uniform(*p.streak_angle_range)
    for _ in range(n):
        angle = math.radians(float(np.clip(base + rng.normal(0, 2.0), *p.streak_angle_range)))
        length = rng.uniform(*p.streak_length_range)
        width = int(rng.integers(p.streak_width_range[0], p.streak_width_range[1] + 1))
        alpha = float(rng.uniform(*p.streak_intensity_range))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        dy, dx = 0.5 * length * math.cos(angle), 0.5 * length * math.sin(angle)
        p0 = (int(round(cx - dx)), int(round(cy - dy)))
        p1 = (int(round(cx + dx)), int(round(cy + dy)))
        streak = np.zeros_like(layer)
        cv2.line(streak, p0, p1, alpha, thickness=width, lineType=cv2.LINE_8)
        layer = np.maximum(layer, streak)
    if p.streak_blur_sigma > 0 and n > 0:
        layer = cv2.GaussianBlur(layer, (0, 0), p.streak_blur_sigma, borderType=cv2.BORDER_REFLECT)
    return layer.astype(np.float32)


def synth_pair(p: SynthParams, index: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Deterministic (contaminated, clean, depth) triple for ``(p.seed, index)``.

    Images are ``[3,H,W]`` float32 in [0, 1], depth is ``[H,W]`` in [0, 1].
    """
    rng = np.random.default_rng([p.seed, index])
    clean, depth = _scene(rng, p)
    rain = _rain_layer(rng, p)
    beta = np.float32(rng.uniform(*p.beta_range))
    airlight = np.float32(rng.uniform(*p.airlight_range))
    t = np.exp(-beta * depth)[..., None]
    hazy = clean * t + airlight * (1 - t)
    contaminated = np.clip(hazy + rain[..., None], 0.0, 1.0).astype(np.float32)
    to_chw = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))
    return to_chw(contaminated), to_chw(clean), torch.from_numpy(depth)


# -- paired datasets -------------------------------------------------------------

@dataclass
class PairedDataset:
    """Decoded image pairs in deterministic stem order."""

    stems: list[str]
    inputs: list[torch.Tensor]
    targets: list[torch.Tensor]
    size: tuple[int, int] | None = None
    paths: list[tuple[Path, Path]] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.stems) == len(self.inputs) == len(self.targets)):
            raise DatasetError("stems, inputs and targets must have equal length")

    def __len__(self):
        return len(self.stems)

    def __getitem__(self, i):
        return self.inputs[i], self.targets[i]

    def subset(self, indices) -> PairedDataset:
        indices = list(indices)
        paths = [self.paths[i] for i in indices] if self.paths else []
        return PairedDataset([self.stems[i] for i in indices], [self.inputs[i] for i in indices],
                             [self.targets[i] for i in indices], self.size, paths)

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        return (torch.stack([self.inputs[i] for i in indices]),
                torch.stack([self.targets[i] for i in indices]))


def read_image(path: str | Path, size: tuple[int, int] | None = None) -> torch.Tensor:
    """Decode to ``[3,H,W]`` float32 in [0,1]; optional bilinear resize to ``(height, width)``."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and (im.height, im.width) != tuple(size):
                im = im.resize((size[1], size[0]), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().clamp(0, 1).cpu().numpy().transpose(1, 2, 0)
    return np.round(arr * 255.0).astype(np.uint8)


def write_image(path: str | Path, img: torch.Tensor) -> None:
    Image.fromarray(to_uint8(img)).save(path)


def load_paired(root: str | Path, size: tuple[int, int] | None = None) -> PairedDataset:
    """Load ``<root>/input/*.png`` against ``<root>/gt/*.png`` by matching stem."""
    root = Path(root)
    if size is not None and (size[0] % 16 or size[1] % 16):
        raise DatasetError(f"resize target {size} must be divisible by 16")
    in_dir, gt_dir = root / "input", root / "gt"
    for d in (in_dir, gt_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory {d}")
    inputs = {p.stem: p for p in in_dir.glob("*.png")}
    gts = {p.stem: p for p in gt_dir.glob("*.png")}
    orphans = sorted(set(inputs) ^ set(gts))
    if orphans:
        raise DatasetError(f"unpaired stems: {', '.join(orphans)}")
    if not inputs:
        raise DatasetError(f"no PNG pairs under {root}")
    stems = sorted(inputs)
    paths = [(inputs[s], gts[s]) for s in stems]
    xs, ys = [], []
    for a, b in paths:
        x, y = read_image(a, size), read_image(b, size)
        if x.shape != y.shape:
            raise DatasetError(f"pair {a.stem} has mismatched sizes {tuple(x.shape)} vs {tuple(y.shape)}")
        xs.append(x)
        ys.append(y)
    return PairedDataset(stems, xs, ys, size, paths)


def split(ds: PairedDataset, fraction: float, seed: int) -> tuple[PairedDataset, PairedDataset]:
    """Seeded shuffle split into disjoint (train, val) covering ``ds``."""
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_train = int(round(fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"fraction {fraction} leaves an empty side for {n} items")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(sorted(order[:n_train])), ds.subset(sorted(order[n_train:]))


def synth_dataset(n: int, params: SynthParams, start: int = 0) -> PairedDataset:
    """In-memory dataset of ``n`` synthetic pairs with indices ``start..start+n-1``."""
    stems, xs, ys = [], [], []
    for i in range(start, start + n):
        x, y, _ = synth_pair(params, i)
        stems.append(f"{i:05d}")
        xs.append(x)
        ys.append(y)
    return PairedDataset(stems, xs, ys, (params.height, params.width))


def write_synth_dataset(root: str | Path, n: int, params: SynthParams, start: int = 0) -> list[str]:
    """Write ``input/``, ``gt/`` and 16-bit ``depth/`` PNGs; returns the stems."""
    root = Path(root)
    for sub in ("input", "gt", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(start, start + n):
        x, y, d = synth_pair(params, i)
        stem = f"{i:05d}"
        write_image(root / "input" / f"{stem}.png", x)
        write_image(root / "gt" / f"{stem}.png", y)
        depth16 = np.round(d.numpy() * 65535.0).astype(np.uint16)
        Image.fromarray(depth16).save(root / "depth" / f"{stem}.png")
        stems.append(stem)
    return stems
