import json
import math

import pytest
import torch

from adunet import trainer as trainer_mod
from adunet.checkpoint import load_checkpoint
from adunet.config import tiny_config
from adunet.data import SynthParams, synth_dataset
from adunet.metrics import image_metrics
from adunet.network import ADUNet
from adunet.trainer import NonFiniteLossError, PlateauSchedule, TrainConfig, evaluate, train


@pytest.fixture(scope="module")
def small_ds():
    return synth_dataset(8, SynthParams(height=32, width=32, seed=1))


def test_constant_metric_decays_twice():
    sched = PlateauSchedule(1e-3, 0.1, 5)
    for _ in range(11):
        lr = sched.step(20.0)
    assert lr == pytest.approx(1e-5, rel=1e-12)


def test_improving_metric_keeps_lr():
    sched = PlateauSchedule(1e-3, 0.1, 5)
    assert all(sched.step(float(i)) == 1e-3 for i in range(30))


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(plateau_factor=1.0), dict(plateau_factor=0.0),
                                    dict(batch_size=0), dict(monitor="val_loss")])
def test_train_config_invariants(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_identity_params_report_raw_metrics(tiny, small_ds):
    x, gt = small_ds.batch(range(len(small_ds)))
    raw = image_metrics(x, gt)
    m = evaluate(ADUNet(tiny).to_store(), tiny, small_ds)
    assert m.psnr == pytest.approx(raw.psnr, abs=1e-9)
    assert m.ssim == pytest.approx(raw.ssim, abs=1e-9)


def test_untrained_metrics_finite(small_ds):
    model = ADUNet(tiny_config(seed=4))
    with torch.no_grad():
        model.conv5_c.conv2.weight.normal_()
    m = evaluate(model, model.config, small_ds)
    assert math.isfinite(m.psnr) and math.isfinite(m.ssim)


def test_empty_dataset_rejected(tiny, small_ds):
    empty = small_ds.subset([])
    with pytest.raises(ValueError):
        evaluate(ADUNet(tiny), tiny, empty)
    with pytest.raises(ValueError):
        train(tiny, TrainConfig(epochs=1), empty, small_ds)


@pytest.mark.slow
def test_overfit_run_improves(tiny, small_ds):
    cfg = tiny.replace(loss_mode="mse")
    x, gt = small_ds.batch(range(len(small_ds)))
    before = image_metrics(x, gt).psnr
    report, model = train(cfg, TrainConfig(epochs=1000, max_steps=200, batch_size=8, plateau_patience=50),
                          small_ds, small_ds)
    assert report.steps == 200
    assert report.step_loss[-1] < report.step_loss[0]
    assert report.train_loss[-1] < report.train_loss[0]
    assert evaluate(model, cfg, small_ds).psnr > before


def test_loss_traces_reproducible(tiny, small_ds):
    tc = TrainConfig(epochs=3, batch_size=4, seed=5)
    a, _ = train(tiny, tc, small_ds, small_ds)
    b, _ = train(tiny, tc, small_ds, small_ds)
    assert a.step_loss == b.step_loss and a.val_psnr == b.val_psnr


def test_one_step_moves_parameters(tiny, small_ds):
    model = ADUNet(tiny)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(tiny, TrainConfig(epochs=1, max_steps=1, batch_size=4), small_ds, small_ds, model=model)
    norm = sum((v.float() - before[k].float()).norm() for k, v in model.state_dict().items())
    assert norm > 0


def test_lr_trace_and_checkpoints(tmp_path, tiny, small_ds, monkeypatch):
    scores = iter([10.0, 11.0] + [11.0] * 12)
    real = trainer_mod.evaluate

    def stub(model, config, ds, batch_size=8):
        m = real(model, config, ds.subset([0, 1]), batch_size)
        m.psnr = next(scores)
        return m

    monkeypatch.setattr(trainer_mod, "evaluate", stub)
    tc = TrainConfig(epochs=14, batch_size=4, plateau_patience=5, max_steps=None, checkpoint_dir=str(tmp_path))
    report, _ = train(tiny, tc, small_ds.subset(range(4)), small_ds)
    assert report.lr[:7] == [1e-3] * 7
    assert report.lr[7:12] == [pytest.approx(1e-4, rel=1e-12)] * 5
    assert report.lr[12:] == [pytest.approx(1e-5, rel=1e-12)] * 2
    for prev, cur in zip(report.lr, report.lr[1:]):
        assert cur == prev or cur == pytest.approx(prev * 0.1, rel=1e-12)
    assert report.best_epoch == 2
    _, _, best_epoch = load_checkpoint(tmp_path / "best.ckpt")
    _, _, last_epoch = load_checkpoint(tmp_path / "last.ckpt")
    assert (best_epoch, last_epoch) == (2, 14)
    assert (tmp_path / "epoch_14.ckpt").exists()
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["lr"] == report.lr and saved["wall_clock"] > 0


def test_best_checkpoint_matches_best_metric(tmp_path, tiny, small_ds):
    tc = TrainConfig(epochs=3, batch_size=4, checkpoint_dir=str(tmp_path))
    report, _ = train(tiny, tc, small_ds, small_ds)
    store, _, epoch = load_checkpoint(tmp_path / "best.ckpt")
    assert epoch == report.best_epoch
    assert report.best_val_psnr == max(report.val_psnr)
    assert evaluate(store, tiny, small_ds).psnr == pytest.approx(report.best_val_psnr, abs=1e-9)


def test_non_finite_loss_aborts(tiny, small_ds, monkeypatch):
    monkeypatch.setattr(trainer_mod, "loss_fn", lambda gt, y, mode: (y * float("nan")).mean())
    with pytest.raises(NonFiniteLossError, match="batch 0"):
        train(tiny, TrainConfig(epochs=1), small_ds, small_ds)
