"""Optimizer math, schedule, and short training-loop behavior."""

import json

import numpy as np
import pytest

from lgfn.autodiff import Tensor
from lgfn.errors import ConfigError, TrainingDivergedError
from lgfn.lightfield import LightField, SamplePair, degrade_bicubic
from lgfn.model import LgfnConfig, ParamStore, init_params
from lgfn.train import AdamState, TrainConfig, adam_step, lr_at, train_loop


def scalar_store(value=1.0):
    return ParamStore({"p.w": Tensor(np.array([value]), requires_grad=True)})


def test_adam_zero_gradient_keeps_params():
    p = scalar_store(0.7)
    state = AdamState(p)
    adam_step(p, {"p.w": np.zeros(1)}, state, lr=0.1)
    assert p["p.w"].data[0] == 0.7
    assert state.t == 1


def test_adam_first_step_closed_form():
    p = scalar_store(0.0)
    state = AdamState(p)
    lr = 2e-4
    adam_step(p, {"p.w": np.ones(1)}, state, lr=lr)
    # m_hat = 1, v_hat = 1 at t=1, so the update is -lr / (1 + eps)
    assert p["p.w"].data[0] == pytest.approx(-lr / (1 + 1e-8), rel=1e-12)


def test_adam_deterministic_trajectories():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=3) for _ in range(10)]

    def run():
        p = ParamStore({"w": Tensor(np.zeros(3), requires_grad=True)})
        st = AdamState(p)
        for g in grads:
            adam_step(p, {"w": g}, st, lr=1e-3)
        return p["w"].data.copy()

    assert np.array_equal(run(), run())


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == pytest.approx(2e-4)
    assert lr_at(14, cfg) == pytest.approx(2e-4)
    assert lr_at(15, cfg) == pytest.approx(1e-4)
    assert lr_at(30, cfg) == pytest.approx(5e-5)
    assert lr_at(45, cfg) == pytest.approx(2.5e-5)


def smoke_pair(rng, U=2, V=2, H=16, W=16, s=2):
    base = rng.random((U, V, 1, s * H, s * W)).astype(np.float32)
    hr = LightField(base)
    return SamplePair(degrade_bicubic(hr, s), hr, s)


def test_train_loop_deterministic_and_logs(tmp_path):
    rng = np.random.default_rng(1)
    pair = smoke_pair(rng)
    cfg = LgfnConfig(channels=8, num_lgfm=1, scale=2, angular=2)
    tcfg = TrainConfig(epochs=3, seed=7)

    params1, logs1 = train_loop([pair], cfg, tcfg, out_dir=tmp_path / "run1")
    params2, logs2 = train_loop([pair], cfg, tcfg, out_dir=None)
    assert [r["total"] for r in logs1] == [r["total"] for r in logs2]
    assert all(np.array_equal(params1[n].data, params2[n].data) for n in params1.names())

    lines = (tmp_path / "run1" / "metrics.jsonl").read_text().strip().split("\n")
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"step", "epoch", "lr", "l1", "fft_charbonnier", "total"}
    assert (tmp_path / "run1" / "model_final.ckpt").exists()


def test_train_loop_lr_halves_at_epoch_boundaries():
    rng = np.random.default_rng(2)
    pair = smoke_pair(rng, H=8, W=8)
    cfg = LgfnConfig(channels=8, num_lgfm=1, scale=2, angular=2,
                     enable_esam=False, enable_ecam=False)  # keep it quick
    tcfg = TrainConfig(epochs=31, halve_every=15, seed=0, augment=False)
    _, logs = train_loop([pair], cfg, tcfg)
    by_epoch = {r["epoch"]: r["lr"] for r in logs}
    assert by_epoch[0] == pytest.approx(2e-4)
    assert by_epoch[14] == pytest.approx(2e-4)
    assert by_epoch[15] == pytest.approx(1e-4)
    assert by_epoch[30] == pytest.approx(5e-5)


def test_train_loop_loss_decreases_on_short_overfit():
    rng = np.random.default_rng(3)
    pair = smoke_pair(rng)
    cfg = LgfnConfig(channels=8, num_lgfm=1, scale=2, angular=2)
    tcfg = TrainConfig(epochs=60, halve_every=10**6, seed=0, augment=False)
    _, logs = train_loop([pair], cfg, tcfg)
    assert logs[-1]["total"] < logs[0]["total"]


def test_train_loop_aborts_on_nonfinite():
    rng = np.random.default_rng(4)
    pair = smoke_pair(rng, H=8, W=8)
    cfg = LgfnConfig(channels=8, num_lgfm=1, scale=2, angular=2)
    params = init_params(cfg, 0)
    params["fusion.conv.w"].data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train_loop([pair], cfg, TrainConfig(epochs=1, augment=False), params=params)
    assert exc.value.step == 0
    assert "total" in exc.value.terms


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr0=0.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch=2).validate()
    with pytest.raises(ConfigError):
        TrainConfig(w_l1=-0.1).validate()
    with pytest.raises(ConfigError):
        train_loop([], LgfnConfig(), TrainConfig())
