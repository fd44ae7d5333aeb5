"""Adam training loop with warmup + cosine schedule, and detection metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .attention import ConfigError
from .model import ModalityFeatures, ModelConfig, ParameterStore, forward
from .tensor import GradientTape, NumericError, backward, parameter

log = logging.getLogger(__name__)

__all__ = [
    "REPORTED_PEAK_LR",
    "TrainConfig",
    "PRESETS",
    "MetricsReport",
    "TrainingDiverged",
    "lr_at",
    "AdamState",
    "optimizer_step",
    "batch_gradients",
    "accumulate_gradients",
    "train",
    "evaluate",
    "f1_score",
    "metrics_from_predictions",
    "steps_per_epoch",
    "zero_modalities",
]

# Learning rate reported for the original fine-tuning run; far too small to
# train from random initialization, kept selectable through PRESETS["reported"].
REPORTED_PEAK_LR = 5e-10


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 3e-4
    warmup_ratio: float = 0.02
    epochs: int = 10
    batch_size: int = 4
    grad_accum_steps: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must lie in (0, 1), got {self.warmup_ratio}")
        if self.grad_accum_steps < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("epochs, batch_size and grad_accum_steps must all be >= 1")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "default": TrainConfig(),
    "reported": TrainConfig(peak_lr=REPORTED_PEAK_LR),
    "overfit": TrainConfig(peak_lr=3e-3, epochs=75, batch_size=4, grad_accum_steps=1),
    "ablation": TrainConfig(peak_lr=3e-3, epochs=30),
}


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` then half-cosine decay to 0 at ``total_steps``."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = max(1, math.ceil(cfg.warmup_ratio * total_steps))
    if step <= warmup:
        return cfg.peak_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: ParameterStore,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[ParameterStore, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.t + 1
    new_params = ParameterStore()
    m_new, v_new = {}, {}
    for path, p in params.items():
        g = grads.get(path)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {path} has shape {g.shape}, parameter has {p.shape}")
        m = cfg.beta1 * state.m.get(path, 0.0) + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(path, 0.0) + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        new_params[path] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        m_new[path], v_new[path] = m, v
    return new_params, AdamState(t, m_new, v_new)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / n if n else 0.0

    def table_row(self) -> str:
        """Percentages with two decimals, e.g. ``P 92.58  R 87.93  F1 90.19``."""
        return f"P {100 * self.precision:.2f}  R {100 * self.recall:.2f}  F1 {100 * self.f1:.2f}"

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1, "accuracy": self.accuracy,
        }


def metrics_from_predictions(preds: Iterable[int], labels: Iterable[int]) -> MetricsReport:
    tp = fp = fn = tn = 0
    for p, y in zip(preds, labels):
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return MetricsReport(tp, fp, fn, tn)


def evaluate(params: ParameterStore, dataset: Sequence[ModalityFeatures], config: ModelConfig) -> MetricsReport:
    """Argmax predictions over the dataset; class 1 (stuttered) is positive."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    tensors = params.as_tensors()
    preds = [int(np.argmax(forward(s, tensors, config).data)) for s in dataset]
    return metrics_from_predictions(preds, [s.label for s in dataset])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at optimizer step {step}{': ' + detail if detail else ''}")
        self.step = step


def batch_gradients(
    params: ParameterStore, batch: Sequence[ModalityFeatures], config: ModelConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over ``batch`` and its gradient for every parameter."""
    with GradientTape() as tape:
        leaves = {k: parameter(v, k) for k, v in params.items()}
        logits = T.stack([forward(s, leaves, config) for s in batch])
        loss = T.cross_entropy(logits, [s.label for s in batch])
    grads = backward(tape, loss)
    return loss.item(), grads


def accumulate_gradients(
    params: ParameterStore, micro_batches: Sequence[Sequence[ModalityFeatures]], config: ModelConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean of per-micro-batch losses and gradients, summed in order."""
    total_loss = 0.0
    total: dict[str, np.ndarray] = {}
    for mb in micro_batches:
        loss, grads = batch_gradients(params, mb, config)
        total_loss += loss
        for k, g in grads.items():
            total[k] = total[k] + g if k in total else g.copy()
    n = len(micro_batches)
    return total_loss / n, {k: g / n for k, g in total.items()}


def steps_per_epoch(n_samples: int, cfg: TrainConfig) -> int:
    return math.ceil(math.ceil(n_samples / cfg.batch_size) / cfg.grad_accum_steps)


def train(
    params: ParameterStore,
    dataset: Sequence[ModalityFeatures],
    config: ModelConfig,
    cfg: TrainConfig = TrainConfig(),
    on_log: Callable[[dict], None] | None = None,
) -> tuple[ParameterStore, list[dict]]:
    """Run ``cfg.epochs`` epochs of shuffled mini-batch Adam.

    Every optimizer step logs ``{epoch, step, lr, loss}``; each epoch closes
    with a record that adds training-set precision, recall and f1.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    per_epoch = steps_per_epoch(len(dataset), cfg)
    total = cfg.epochs * per_epoch
    state = AdamState()
    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if on_log is not None:
            on_log(rec)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        batches = [
            [dataset[i] for i in order[j : j + cfg.batch_size]] for j in range(0, len(order), cfg.batch_size)
        ]
        losses = []
        for j in range(0, len(batches), cfg.grad_accum_steps):
            step += 1
            try:
                loss, grads = accumulate_gradients(params, batches[j : j + cfg.grad_accum_steps], config)
            except NumericError as e:
                raise TrainingDiverged(step, str(e)) from None
            if not math.isfinite(loss):
                raise TrainingDiverged(step)
            lr = lr_at(step, total, cfg)
            params, state = optimizer_step(params, grads, state, lr, cfg)
            losses.append(loss)
            emit({"epoch": epoch, "step": step, "lr": lr, "loss": loss})
        report = evaluate(params, dataset, config)
        emit(
            {
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "loss": float(np.mean(losses)),
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
            }
        )
        log.info("epoch %d: loss %.4f, train %s", epoch, np.mean(losses), report.table_row())
    return params, records


def zero_modalities(dataset: Sequence[ModalityFeatures], keep: Sequence[str]) -> list[ModalityFeatures]:
    """Zero every modality not in ``keep`` (text becomes all token 0), preserving shapes."""
    out = []
    for s in dataset:
        out.append(
            s.replace(
                video=s.video if "video" in keep else np.zeros_like(s.video),
                audio=s.audio if "audio" in keep else np.zeros_like(s.audio),
                tokens=s.tokens if "text" in keep else np.zeros_like(s.tokens),
            )
        )
    return out

