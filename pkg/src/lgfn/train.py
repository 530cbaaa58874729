"""Adam optimizer, step schedule, and the desk-scale training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .lightfield import SamplePair, augment
from .losses import CHARBONNIER_EPS, combined_loss, fft_charbonnier_loss, l1_loss
from .model import LgfnConfig, ParamStore, checkpoint_save, forward_tensor, init_params


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    halve_every: int = 15
    epochs: int = 100
    batch: int = 1
    w_l1: float = 0.01
    w_fft: float = 1.0
    charbonnier_eps: float = CHARBONNIER_EPS
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.w_l1 < 0 or self.w_fft < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.batch != 1:
            raise ConfigError("only batch size 1 is supported")
        if self.halve_every < 1 or self.epochs < 0:
            raise ConfigError("halve_every must be >= 1 and epochs >= 0")
        return self


class AdamState:
    """First/second moment buffers mirroring a parameter store, plus step count."""

    def __init__(self, params: ParamStore):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ParamStore, AdamState]:
    """Standard bias-corrected Adam update, in place and deterministic."""
    state.t += 1
    t = state.t
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        if g.shape != tensor.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, "
                             f"parameter has {tensor.data.shape}")
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr0 halved every ``halve_every`` epochs."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


def _pair_tensors(pair: SamplePair, dtype) -> tuple[Tensor, Tensor]:
    lr, hr = pair.lr, pair.hr
    x = Tensor(lr.data.reshape(1, 1, lr.U * lr.V, lr.H, lr.W).astype(dtype))
    y = Tensor(hr.data.reshape(1, 1, hr.U * hr.V, hr.H, hr.W).astype(dtype))
    return x, y


def train_loop(samples: list[SamplePair], cfg: LgfnConfig, tcfg: TrainConfig,
               out_dir=None, params: ParamStore | None = None
               ) -> tuple[ParamStore, list[dict]]:
    """Seeded batch-1 loop over epochs x samples with on-the-fly augmentation.

    Logs one record per step ({step, epoch, lr, l1, fft_charbonnier, total});
    aborts with step/loss diagnostics if the loss goes non-finite.
    """
    if not samples:
        raise ConfigError("training needs at least one sample pair")
    tcfg.validate()
    cfg.validate()
    for pair in samples:
        if pair.scale != cfg.scale:
            raise ConfigError(f"sample scale {pair.scale} != model scale {cfg.scale}")

    if params is None:
        params = init_params(cfg, tcfg.seed)
    state = AdamState(params)
    rng = np.random.default_rng(tcfg.seed)
    dtype = np.float32

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "w")

    logs: list[dict] = []
    step = 0
    try:
        for epoch in range(tcfg.epochs):
            lr = lr_at(epoch, tcfg)
            for pair in samples:
                if tcfg.augment:
                    pair = augment(pair, int(rng.integers(0, 8)))
                x, target = _pair_tensors(pair, dtype)
                params.zero_grads()
                sr = forward_tensor(x, params, cfg, pair.lr.U, pair.lr.V)
                part_l1 = l1_loss(sr, target)
                part_fft = fft_charbonnier_loss(sr, target, tcfg.charbonnier_eps)
                total = ad.add(ad.mul(part_l1, tcfg.w_l1), ad.mul(part_fft, tcfg.w_fft))
                record = {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "l1": float(part_l1.data),
                    "fft_charbonnier": float(part_fft.data),
                    "total": float(total.data),
                }
                if not np.isfinite(record["total"]):
                    raise TrainingDivergedError(step, record)
                ad.backward(total)
                grads = {n: t.grad for n, t in params.items() if t.grad is not None}
                adam_step(params, grads, state, lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
                logs.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                step += 1
            if (
                out_dir is not None
                and tcfg.checkpoint_every
                and (epoch + 1) % tcfg.checkpoint_every == 0
            ):
                checkpoint_save(params, out_dir / f"model_epoch{epoch + 1:04d}.ckpt")
        if out_dir is not None:
            checkpoint_save(params, out_dir / "model_final.ckpt")
    finally:
        if log_fh is not None:
            log_fh.close()
    return params, logs
