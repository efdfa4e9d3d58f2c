"""Supervised pretraining loop: Adam on the weighted NLL objective."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .datagen import Dataset
from .errors import EmptyDataset
from .model import (
    ModelConfig,
    TransformerPolicy,
    batch_nll_loss,
    params_checksum,
    tokenize,
)
from .rng import RngStream

__all__ = ["TrainConfig", "TrainReport", "train", "evaluate_loss", "save_report_csv"]


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 1
    shuffle_seed: int = 0
    grad_clip: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid training configuration")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    params_checksum: str = ""


class _Adam:
    def __init__(self, params, config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data = p.data - c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def _clip_grads(params, max_norm: float) -> None:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale


def _tokenize_dataset(dataset: Dataset, config: ModelConfig):
    tokens = [tokenize(config, s.context, s.query_state) for s in dataset.samples]
    labels = np.array([s.action_label for s in dataset.samples], dtype=np.int64)
    weights = np.array([s.weight for s in dataset.samples], dtype=float)
    lengths = np.array([len(s.context) for s in dataset.samples], dtype=np.int64)
    return tokens, labels, weights, lengths


def _pad_batch(token_list, idx: np.ndarray, lengths: np.ndarray, config: ModelConfig) -> np.ndarray:
    # Canonical width (see tokenize_batch): uniform shapes across batches.
    width = config.max_context + 1
    batch = np.zeros((len(idx), width, config.token_dim), dtype=config.np_dtype)
    for row, i in enumerate(idx):
        batch[row, : lengths[i] + 1] = token_list[i]
    return batch


def train(
    dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig
) -> tuple[TransformerPolicy, TrainReport]:
    """Pretrain a fresh model on ``dataset``.

    One epoch is one seeded-shuffled full pass in batches of
    ``batch_size``; gradients are globally norm-clipped before each Adam
    step. Deterministic given the dataset and the two seeds.
    """
    if not dataset.samples:
        raise EmptyDataset("cannot train on an empty dataset")
    start = time.perf_counter()
    model = TransformerPolicy(model_config, rng=RngStream(train_config.init_seed))
    tokens, labels, weights, lengths = _tokenize_dataset(dataset, model_config)
    optimizer = _Adam(model.params, train_config)
    n = len(dataset.samples)
    report = TrainReport()
    for epoch in range(train_config.epochs):
        order = RngStream(train_config.shuffle_seed, epoch).generator.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, train_config.batch_size):
            idx = order[lo : lo + train_config.batch_size]
            batch = _pad_batch(tokens, idx, lengths, model_config)
            for p in model.params.values():
                p.grad = None
            with Tape() as tape:
                logits = model.forward_batch(batch)
                loss = batch_nll_loss(logits, labels[idx], weights[idx], lengths[idx])
            tape.backward(loss)
            _clip_grads(model.params, train_config.grad_clip)
            optimizer.step()
            epoch_loss += float(loss.data) * len(idx)
        report.epoch_losses.append(epoch_loss / n)
    report.wall_time = time.perf_counter() - start
    report.params_checksum = params_checksum(model.params)
    return model, report


def evaluate_loss(model: TransformerPolicy, dataset: Dataset, batch_size: int = 256) -> float:
    """Mean weighted NLL over the dataset, no gradient updates."""
    if not dataset.samples:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    tokens, labels, weights, lengths = _tokenize_dataset(dataset, model.config)
    n = len(dataset.samples)
    total = 0.0
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        batch = _pad_batch(tokens, idx, lengths, model.config)
        logits = model.forward_batch(batch).data.astype(np.float64)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, labels[idx, None, None], axis=-1)[..., 0]
        valid = np.arange(batch.shape[1])[None, :] <= lengths[idx, None]
        per_sample = (picked * valid).sum(axis=1) / (lengths[idx] + 1)
        total += float(np.sum(-weights[idx] * per_sample))
    return total / n


def save_report_csv(report: TrainReport, path: str, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(report.epoch_losses, start=1):
            fh.write(f"{epoch},{loss!r}\n")
