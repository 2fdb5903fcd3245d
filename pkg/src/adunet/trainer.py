"""Training loop: Adam, plateau learning-rate decay on validation PSNR, checkpoints, evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .checkpoint import ParameterStore, save_checkpoint
from .config import NetworkConfig
from .data import PairedDataset
from .metrics import Metrics, image_metrics, loss as loss_fn
from .network import ADUNet, build_model

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    monitor: str = "val_psnr"
    seed: int = 0
    checkpoint_dir: str | None = None
    max_steps: int | None = None
    save_every_epoch: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.monitor != "val_psnr":
            raise ValueError(f"unsupported monitor {self.monitor!r}")


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    ``step(metric)`` is called once per epoch with a higher-is-better metric
    and returns the learning rate for the next epoch.
    """

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    val_ssim: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_psnr: float | None = None
    steps: int = 0
    wall_clock: float = 0.0

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def evaluate(model_or_store, config: NetworkConfig, ds: PairedDataset, batch_size: int = 8) -> Metrics:
    """Mean PSNR/SSIM of clamped eval-mode outputs against ground truth."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if isinstance(model_or_store, ParameterStore):
        model = build_model(config, model_or_store)
    else:
        model = model_or_store
    was_training = model.training
    model.eval()
    psnrs, ssims, mses = [], [], []
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = list(range(start, min(start + batch_size, len(ds))))
            x, gt = ds.batch(idx)
            y, _, _ = model(x)
            m = image_metrics(y.clamp(0, 1), gt)
            psnrs.append(m.psnr * m.count)
            ssims.append(m.ssim * m.count)
            mses.append(m.mse * m.count)
    model.train(was_training)
    n = len(ds)
    return Metrics(sum(psnrs) / n, sum(ssims) / n, sum(mses) / n, n)


def _batches(n: int, batch_size: int, gen: torch.Generator) -> list[list[int]]:
    order = torch.randperm(n, generator=gen).tolist()
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # BN over a GCFF channel vector needs more than one sample per batch
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def train(net_config: NetworkConfig, train_config: TrainConfig, train_ds: PairedDataset,
          val_ds: PairedDataset, model: ADUNet | None = None) -> tuple[TrainReport, ADUNet]:
    """Run the optimisation loop; returns the report and the trained model."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    tc = train_config
    _seed_everything(tc.seed)
    if model is None:
        model = ADUNet(net_config)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr, betas=tc.betas, eps=tc.eps)
    schedule = PlateauSchedule(tc.lr, tc.plateau_factor, tc.plateau_patience)
    gen = torch.Generator().manual_seed(tc.seed)
    out_dir = Path(tc.checkpoint_dir) if tc.checkpoint_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    report = TrainReport()
    t0 = time.perf_counter()
    steps = 0
    for epoch in range(1, tc.epochs + 1):
        lr = schedule.lr
        for group in opt.param_groups:
            group["lr"] = lr
        epoch_losses = []
        for b, idx in enumerate(_batches(len(train_ds), tc.batch_size, gen)):
            x, gt = train_ds.batch(idx)
            y, _, _ = model(x)
            value = loss_fn(gt, y, net_config.loss_mode)
            if not torch.isfinite(value):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad(set_to_none=True)
            value.backward()
            opt.step()
            steps += 1
            epoch_losses.append(value.item())
            report.step_loss.append(epoch_losses[-1])
            if tc.max_steps is not None and steps >= tc.max_steps:
                break
        metrics = evaluate(model, net_config, val_ds)
        model.train()
        report.epochs.append(epoch)
        report.train_loss.append(sum(epoch_losses) / max(len(epoch_losses), 1))
        report.lr.append(lr)
        report.val_psnr.append(metrics.psnr)
        report.val_ssim.append(metrics.ssim)
        improved = report.best_val_psnr is None or metrics.psnr > report.best_val_psnr
        if improved:
            report.best_epoch, report.best_val_psnr = epoch, metrics.psnr
        log.info("epoch %d loss %.5f lr %.2e val psnr %.3f ssim %.4f", epoch,
                 report.train_loss[-1], lr, metrics.psnr, metrics.ssim)
        schedule.step(metrics.psnr)
        if out_dir:
            store = model.to_store()
            state = opt.state_dict()
            if tc.save_every_epoch:
                save_checkpoint(store, state, epoch, out_dir / f"epoch_{epoch}.ckpt")
            if improved:
                save_checkpoint(store, state, epoch, out_dir / "best.ckpt")
            save_checkpoint(store, state, epoch, out_dir / "last.ckpt")
        if tc.max_steps is not None and steps >= tc.max_steps:
            break
    report.steps = steps
    report.wall_clock = time.perf_counter() - t0
    if out_dir:
        report.to_json(out_dir / "report.json")
    return report, model
