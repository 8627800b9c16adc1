"""Cross-entropy training with AdamW on the toy shape task."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import train_val_split
from .model import Model, forward, named_parameters
from .tensor import Tensor, constant, reshape, select_index, sub, texp, tlog, tmean, tsum


class TrainingDiverged(RuntimeError):
    """Loss or gradients stopped being finite."""


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood, stable for any logit magnitude."""
    if logits.ndim != 2:
        raise ValueError(f"expected logits (B, classes), got {logits.shape}")
    shift = constant(logits.data.max(axis=1, keepdims=True))
    z = sub(logits, shift)
    lse = tlog(tsum(texp(z), axis=1))  # (B,)
    picked = select_index(z, np.asarray(labels, dtype=np.int64))
    return tmean(sub(lse, picked))


def accuracy(logits, labels) -> float:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return float(np.mean(np.argmax(data, axis=1) == np.asarray(labels)))


@dataclass
class AdamW:
    """Decoupled weight decay; decay touches only rank >= 2 tensors."""

    params: list
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step_count: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            else:
                v = self._v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data.astype(np.float64)
            p.data -= (lr * update).astype(p.dtype)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise TrainingDiverged(f"gradient norm is {norm}")
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    final_val_acc: float = 0.0
    final_val_loss: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for row in self.epochs:
            lines.append(
                f"{row['epoch']},{row['train_loss']:.6f},"
                f"{row['val_loss']:.6f},{row['val_acc']:.6f}"
            )
        return "\n".join(lines) + "\n"


def evaluate(model: Model, images, labels, batch_size: int = 64):
    """Eval-mode mean loss and accuracy over the whole set."""
    n = images.shape[0]
    loss_sum, correct = 0.0, 0
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        logits = forward(model, xb, train=False)
        loss_sum += float(cross_entropy(logits, yb).item()) * xb.shape[0]
        correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return loss_sum / n, correct / n


def train_toy(
    model: Model,
    images,
    labels,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 3e-3,
    weight_decay: float = 0.05,
    clip_norm: float = 1.0,
    val_fraction: float = 0.2,
    seed: int = 0,
    log=None,
) -> TrainReport:
    """Minibatch AdamW training with a held-out validation split.

    Cosine decay to 5% of the peak rate after a one-epoch warmup. Raises
    TrainingDiverged on a non-finite loss instead of looping on NaNs.
    """
    tx, ty, vx, vy = train_val_split(images, labels, val_fraction, seed)
    params = named_parameters(model)
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 1)
    steps_per_epoch = max(1, -(-tx.shape[0] // batch_size))
    total_steps = epochs * steps_per_epoch
    warmup = steps_per_epoch
    report = TrainReport()
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(tx.shape[0])
        loss_sum = 0.0
        for start in range(0, tx.shape[0], batch_size):
            idx = order[start : start + batch_size]
            try:
                logits = forward(model, tx[idx], train=True)
                loss = cross_entropy(logits, ty[idx])
            except FloatingPointError as exc:
                raise TrainingDiverged(f"forward overflowed at epoch {epoch}") from exc
            val = float(loss.item())
            if not np.isfinite(val):
                raise TrainingDiverged(f"loss became {val} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            clip_gradients(params, clip_norm)
            if step < warmup:
                cur_lr = lr * (step + 1) / warmup
            else:
                frac = (step - warmup) / max(1, total_steps - warmup)
                cur_lr = lr * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))
            opt.step(lr=cur_lr)
            loss_sum += val * idx.shape[0]
            step += 1
        val_loss, val_acc = evaluate(model, vx, vy, batch_size)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / tx.shape[0],
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        report.epochs.append(row)
        if log is not None:
            log(
                f"epoch {epoch:3d}  train {row['train_loss']:.4f}  "
                f"val {val_loss:.4f}  acc {val_acc:.4f}"
            )
    report.final_val_acc = report.epochs[-1]["val_acc"] if report.epochs else 0.0
    report.final_val_loss = report.epochs[-1]["val_loss"] if report.epochs else 0.0
    return report
