"""Losses, AdamW with gradient clipping, the epoch loop, and checkpoint
averaging. Feature preparation for both targets lives here too so the
training loop and the command-line tools agree on the input contract:

  offline     re/im of the centered STFT (waveform gain applied upstream)
  online      re/im of the causal STFT divided by the running mean mu(t);
              mapping targets are scaled by the same mu so the network
              learns in the normalized domain
  mapping     logMel of the clean spectrogram (eps per mode)
  mask        ratio mask, mel or linear bins per the model config
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import Tensor
from .model import (EnhancementModel, ModelConfig, build, load_params,
                    read_checkpoint, save_checkpoint)
from .normalize import OnlineNorm


# --------------------------------------------------------------- losses

def _diff(pred: Tensor, target) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != t.data.shape:
        raise ValueError(
            f"loss shape mismatch: {pred.data.shape} vs {t.data.shape}")
    return ad.add(pred, ad.mul(t, -1.0))


def loss_mae(pred: Tensor, target) -> Tensor:
    """Mean absolute error, the mapping-target loss."""
    return ad.mean_all(ad.absolute(_diff(pred, target)))


def loss_mrm(pred: Tensor, target) -> Tensor:
    """Mean squared error, the ratio-mask loss."""
    d = _diff(pred, target)
    return ad.mean_all(ad.mul(d, d))


def loss_for_target(target_kind: str):
    return loss_mae if target_kind == "mapping" else loss_mrm


# ------------------------------------------------------------- optimizer

def learning_rate(lr0: float, decay: float, epoch: int) -> float:
    return lr0 * decay ** epoch


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for t in params:
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    total = math.sqrt(total)
    if total > max_norm and total > 0.0:
        scale = np.float32(max_norm / total)
        for t in params:
            if t.grad is not None:
                t.grad = t.grad * scale
    return total


class AdamW:
    """Decoupled-weight-decay Adam. Steps with non-finite gradients are
    skipped and counted rather than applied."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.skipped = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        if not all(np.isfinite(g).all() for g in grads):
            self.skipped += 1
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - np.float32(self.lr) * (
                update + np.float32(self.weight_decay) * p.data)
        return True


# ------------------------------------------------------------- features

def input_features(noisy: np.ndarray, config: ModelConfig):
    """-> (x [257, T, 2] float32, mus [T] float64 | None)."""
    spec = dsp.stft(noisy, hop=config.hop, centered=not config.online)
    mus = None
    data = spec.data
    if config.online:
        _, mus = OnlineNorm(config.norm_k).process(np.abs(data))
        data = data / mus
    x = np.stack([data.real, data.imag], axis=-1).astype(np.float32)
    return x, mus


def target_features(noisy: np.ndarray, clean: np.ndarray,
                    config: ModelConfig, mus=None) -> np.ndarray:
    fb = dsp.cached_filterbank()
    centered = not config.online
    clean_spec = dsp.stft(clean, hop=config.hop, centered=centered)
    if config.target == "mapping":
        data = clean_spec.data / mus if mus is not None else clean_spec.data
        mel = dsp.power_mel(data, fb)
        return dsp.log_mel(mel, eps=config.eps).astype(np.float32)
    noisy_spec = dsp.stft(noisy, hop=config.hop, centered=centered)
    if config.frequency_domain == "linear":
        p_clean = np.abs(clean_spec.data) ** 2
        p_noisy = np.abs(noisy_spec.data) ** 2
    else:
        p_clean = dsp.power_mel(clean_spec, fb)
        p_noisy = dsp.power_mel(noisy_spec, fb)
    return dsp.mel_ratio_mask(p_clean, p_noisy).astype(np.float32)


def prepare_example(noisy: np.ndarray, clean: np.ndarray,
                    config: ModelConfig):
    """-> (x [257, T, 2], y [F_out, T]) ready for batching."""
    x, mus = input_features(noisy, config)
    y = target_features(noisy, clean, config, mus=mus)
    return x, y


# ------------------------------------------------------------ train loop

@dataclass
class TrainConfig:
    lr0: float = 1e-3
    lr_decay: float = 0.99
    clip_norm: float = 10.0
    batch_size: int = 4
    epochs: int = 4
    steps_per_epoch: int = 50
    weight_decay: float = 0.01
    seed: int = 0
    stop_loss_ratio: float | None = None   # early stop at loss < r * initial

    def __post_init__(self):
        if self.lr0 <= 0 or self.clip_norm <= 0:
            raise ValueError("lr0 and clip_norm must be positive")


@dataclass
class TrainResult:
    initial_loss: float
    final_loss: float
    steps: int
    skipped: int
    val_losses: list = field(default_factory=list)


def _batches(examples, batch_size, rng, n_steps):
    order = rng.permutation(len(examples))
    pos = 0
    for _ in range(n_steps):
        if pos + batch_size > len(order):
            order = rng.permutation(len(examples))
            pos = 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        xs = np.stack([examples[i][0] for i in idx])
        ys = np.stack([examples[i][1] for i in idx])
        yield xs, ys


def evaluate(model: EnhancementModel, examples, batch_size=8) -> float:
    loss_fn = loss_for_target(model.config.target)
    total, count = 0.0, 0
    with ad.no_grad():
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            xs = np.stack([e[0] for e in chunk])
            ys = np.stack([e[1] for e in chunk])
            pred = model.forward(Tensor(xs))
            total += float(loss_fn(pred, ys).data) * len(chunk)
            count += len(chunk)
    return total / max(count, 1)


def train_model(model: EnhancementModel, examples, val_examples,
                tcfg: TrainConfig, csv_path=None,
                ckpt_dir=None) -> TrainResult:
    """Epoch loop with per-step CSV logging and per-epoch checkpoints.
    Deterministic for a fixed seed and example list."""
    rng = np.random.default_rng(tcfg.seed)
    loss_fn = loss_for_target(model.config.target)
    opt = AdamW([t for _, t in model.named_params()], lr=tcfg.lr0,
                weight_decay=tcfg.weight_decay)
    writer = None
    csv_file = None
    if csv_path is not None:
        csv_file = open(csv_path, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["step", "epoch", "lr", "loss", "val_loss"])
    initial = None
    last = None
    step = 0
    result_val = []
    stop = False
    try:
        for epoch in range(tcfg.epochs):
            opt.lr = learning_rate(tcfg.lr0, tcfg.lr_decay, epoch)
            for xs, ys in _batches(examples, tcfg.batch_size, rng,
                                   tcfg.steps_per_epoch):
                loss = loss_fn(model.forward(Tensor(xs)), ys)
                value = float(loss.data)
                opt.zero_grad()
                loss.backward()
                clip_gradients(opt.params, tcfg.clip_norm)
                opt.step()
                step += 1
                if initial is None:
                    initial = value
                last = value
                if writer:
                    writer.writerow([step, epoch, f"{opt.lr:.8g}",
                                     f"{value:.8g}", ""])
                if (tcfg.stop_loss_ratio is not None
                        and value < tcfg.stop_loss_ratio * initial):
                    stop = True
                    break
            if val_examples:
                val = evaluate(model, val_examples)
                result_val.append(val)
                if writer:
                    writer.writerow([step, epoch, f"{opt.lr:.8g}", "",
                                     f"{val:.8g}"])
            if ckpt_dir is not None:
                save_checkpoint(f"{ckpt_dir}/epoch_{epoch:03d}.ckpt", model)
            if stop:
                break
    finally:
        if csv_file:
            csv_file.close()
    return TrainResult(initial_loss=initial if initial is not None else 0.0,
                       final_loss=last if last is not None else 0.0,
                       steps=step, skipped=opt.skipped,
                       val_losses=result_val)


def average_checkpoints(paths) -> EnhancementModel:
    """Elementwise mean of same-shaped checkpoints, as a loaded model."""
    if not paths:
        raise ValueError("no checkpoints to average")
    config, first = read_checkpoint(paths[0])
    sums = {n: v.astype(np.float64) for n, v in first.items()}
    for path in paths[1:]:
        other_config, params = read_checkpoint(path)
        if other_config != config or set(params) != set(sums):
            raise ValueError("checkpoints do not match")
        for name, v in params.items():
            if v.shape != sums[name].shape:
                raise ValueError("checkpoints do not match")
            sums[name] += v
    averaged = {n: (v / len(paths)).astype(np.float32)
                for n, v in sums.items()}
    model = build(config, seed=0)
    load_params(model, averaged)
    return model
