"""Mini-batch training with Adam, checkpointing and ROC evaluation."""

from __future__ import annotations

import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import data, metrics, network
from .checkpoint import Checkpoint, save_checkpoint
from .data import AugmentConfig, SampleRecord
from .errors import InvalidArgumentError, TrainingError, UndefinedMetricError
from .network import Model, NetworkConfig
from .optim import AdamConfig, AdamState, adam_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 192
    batch_size: int = 96
    adam: AdamConfig = AdamConfig()
    seed: int = 42
    checkpoint_every: int = 16  # epochs; 0 writes only the final checkpoint
    pos_weight: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_every < 0:
            raise InvalidArgumentError("checkpoint_every must be >= 0")
        if self.threads < 1:
            raise InvalidArgumentError(f"threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be non-negative")
        if self.pos_weight is not None and not self.pos_weight > 0:
            raise InvalidArgumentError("pos_weight must be positive")


class ImageStore:
    """Loads and preprocesses manifest images on demand, keeping them in memory."""

    def __init__(self, records: Sequence[SampleRecord], image_size: int, cache: bool = True):
        self.records = list(records)
        self.image_size = image_size
        self.cache = cache
        self._images: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.records)

    def image(self, index: int) -> np.ndarray:
        img = self._images.get(index)
        if img is None:
            img = data.load_image(self.records[index].image_path, self.image_size)
            if self.cache:
                self._images[index] = img
        return img

    def label(self, index: int) -> int:
        return self.records[index].label


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_losses: list[float] = field(default_factory=list)


def _map(fn, items, pool: ThreadPoolExecutor | None):
    # results come back in input order either way
    return list(pool.map(fn, items)) if pool is not None else [fn(i) for i in items]


def train(
    store: ImageStore,
    config: TrainConfig = TrainConfig(),
    output_dir=None,
    net_config: NetworkConfig = NetworkConfig(),
    augment_config: AugmentConfig | None = None,
    dtype=np.float32,
    echo: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train from a fresh He initialisation seeded by ``config.seed``.

    Each epoch reshuffles the samples from a stream derived from (seed,
    epoch); each sample's augmentation draws from (seed, epoch, index). The
    final partial batch is kept and the loss is averaged per sample, so
    results do not depend on ``threads``.
    """
    if len(store) == 0:
        raise InvalidArgumentError("training set is empty")
    aug = augment_config or AugmentConfig.for_input(net_config.input_shape[1])
    if aug.crop_size != net_config.input_shape[1] or aug.crop_size != net_config.input_shape[2]:
        raise InvalidArgumentError(f"crop size {aug.crop_size} does not match network input {net_config.input_shape}")
    if store.image_size != aug.image_size:
        raise InvalidArgumentError(f"images are preprocessed to {store.image_size}, augmentation expects {aug.image_size}")
    echo = echo or (lambda line: print(line, file=sys.stdout, flush=True))
    out = Path(output_dir) if output_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = (out / "train.log").open("w", encoding="utf-8")

    model = network.build_model(net_config, config.seed, dtype=dtype)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    losses = []
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def snapshot(epoch):
        return Checkpoint(net_config, params, state, config.adam, epoch, config.seed, config.pos_weight)

    try:
        n = len(store)
        for epoch in range(1, config.epochs + 1):
            order = data.shuffle_stream(config.seed, epoch).permutation(n)
            total = 0.0
            for step, start in enumerate(range(0, n, config.batch_size), 1):
                batch = order[start : start + config.batch_size].tolist()
                current = model

                def sample_grad(i, current=current, epoch=epoch):
                    x = data.augment(store.image(i), data.sample_stream(config.seed, epoch, i), aug, dtype)
                    return network.backward(current, x, store.label(i), config.pos_weight)

                grad_sum = None
                batch_loss = 0.0
                chunk = max(config.threads, 1)
                for c in range(0, len(batch), chunk):
                    for res in _map(sample_grad, batch[c : c + chunk], pool):
                        if not math.isfinite(res.loss):
                            raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
                        batch_loss += res.loss
                        if grad_sum is None:
                            grad_sum = [g.copy() for g in res.grads]
                        else:
                            for acc, g in zip(grad_sum, res.grads):
                                acc += g
                scale = 1.0 / len(batch)
                grads = [(g * scale).astype(g.dtype, copy=False) for g in grad_sum]
                params, state = adam_step(params, grads, state, config.adam)
                model = model.with_parameters(params)
                total += batch_loss
            mean = total / n
            losses.append(mean)
            line = f"epoch={epoch} loss={mean:.6f} lr={config.adam.learning_rate:g}"
            echo(line)
            if log_fh is not None:
                log_fh.write(line + "\n")
                log_fh.flush()
            if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(snapshot(epoch), out / f"epoch_{epoch:04d}.ckpt")
        final = snapshot(config.epochs)
        if out is not None:
            save_checkpoint(final, out / "final.ckpt")
        return TrainResult(final, losses)
    finally:
        if pool is not None:
            pool.shutdown()
        if log_fh is not None:
            log_fh.close()


@dataclass
class EvalReport:
    scores: list[float]
    labels: list[int]
    auc: float | None
    roc: list[tuple[float, float]]
    confusion: dict[str, int]

    @property
    def auc_defined(self) -> bool:
        return self.auc is not None

    @property
    def accuracy(self) -> float:
        c = self.confusion
        return (c["tp"] + c["tn"]) / max(len(self.labels), 1)

    def to_text(self) -> str:
        c = self.confusion
        auc = f"{self.auc:.6f}" if self.auc is not None else "undefined (single class)"
        return (
            f"samples = {len(self.labels)}\n"
            f"positives = {sum(self.labels)}\n"
            f"auc = {auc}\n"
            f"auc_defined = {str(self.auc_defined).lower()}\n"
            f"accuracy = {self.accuracy:.6f}\n"
            f"confusion_threshold = 0.5\n"
            f"tp = {c['tp']}\nfp = {c['fp']}\ntn = {c['tn']}\nfn = {c['fn']}\n"
        )

    def roc_text(self) -> str:
        return "".join(f"{f!r} {t!r}\n" for f, t in self.roc)


def report_from_scores(scores: Sequence[float], labels: Sequence[int]) -> EvalReport:
    scores = [float(s) for s in scores]
    labels = [int(y) for y in labels]
    try:
        auc = metrics.roc_auc(scores, labels)
        roc = metrics.roc_curve(scores, labels)
    except UndefinedMetricError:
        auc, roc = None, []
    return EvalReport(scores, labels, auc, roc, metrics.confusion(scores, labels))


def evaluate(model: Model, store: ImageStore, crop_size: int | None = None, threads: int = 1) -> EvalReport:
    """Score every image through a deterministic center crop."""
    if len(store) == 0:
        raise InvalidArgumentError("evaluation set is empty")
    crop = crop_size or model.config.input_shape[1]

    def score(i):
        x = data.center_crop(store.image(i), crop, dtype=model.dtype)
        return network.predict_proba(model, x)

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        scores = _map(score, range(len(store)), pool)
    finally:
        if pool is not None:
            pool.shutdown()
    return report_from_scores(scores, [store.label(i) for i in range(len(store))])
