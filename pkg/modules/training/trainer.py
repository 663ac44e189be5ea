import json
import math
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from core.config import NetworkConfig, SyntheticTask, TrainConfig
from core.errors import SpecError
from core.models import ClipDataset, EpochRecord, OptimizerState, SampleMode, TaskKind
from modules.nn.checkpoint import load_checkpoint, save_checkpoint
from modules.nn.network import Network, build_network
from modules.training.loss import cross_entropy, softmax
from modules.training.optim import lr_at, sgd_step
from modules.training.tasks import gen_dataset, sample_batch
from utils.helpers import atomic_write, progress
from utils.logger import Logger


class Trainer:
    """Builds a network for ``task`` and trains it with SGD; single-threaded and seeded."""

    def __init__(self, net_cfg: NetworkConfig, task: SyntheticTask, train_cfg: TrainConfig):
        self.logger = Logger.get_logger()
        self.train_cfg = train_cfg
        self.net_cfg = self._fit_config(net_cfg, task, train_cfg)
        self.task = self._fit_task(task, self.net_cfg.frames)
        if train_cfg.flip:
            self.logger.warning(f"Flip augmentation disabled: {task.kind.value} is horizontal-order-sensitive")

        self.network: Network = build_network(self.net_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
        if train_cfg.freeze_bn:
            self.network.freeze_bn(keep_stem=True)
        self.state = OptimizerState()
        self.train_set, self.val_set = gen_dataset(self.task)

    def _fit_config(self, net_cfg: NetworkConfig, task: SyntheticTask, train_cfg: TrainConfig) -> NetworkConfig:
        if net_cfg.in_channels != 1:
            raise SpecError(f"synthetic clips are grayscale; network expects {net_cfg.in_channels} channels")
        updates = {}
        if net_cfg.classes != task.num_classes:
            self.logger.info(f"Setting classes to {task.num_classes} for {task.kind.value}")
            updates['classes'] = task.num_classes
        if train_cfg.dropout is not None:
            updates['dropout'] = train_cfg.dropout
        return net_cfg.model_copy(update=updates) if updates else net_cfg

    def _fit_task(self, task: SyntheticTask, frames: int) -> SyntheticTask:
        if task.kind != TaskKind.FRAME_ORDER or task.segments == frames:
            return task
        if task.clip_length % frames:
            self.logger.warning(f"clip_length {task.clip_length} does not split into {frames} segments; "
                                f"sampled frame_order frames may reveal the label")
            return task
        self.logger.info(f"Holding frame_order blob sizes over {frames} segments")
        return SyntheticTask.model_validate({**task.model_dump(), 'segments': frames})

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_set) / self.train_cfg.batch_size)

    def train_epoch(self, epoch: int) -> Tuple[float, float, float]:
        cfg = self.train_cfg
        total_steps = cfg.epochs * self.steps_per_epoch
        # seeded by epoch: a resumed run replays the same batches and dropout masks
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        self.network.reseed_dropout(np.random.default_rng([cfg.seed, 1, epoch]))
        order = rng.permutation(len(self.train_set))
        no_decay, frozen = self.network.no_decay(), self.network.frozen()
        losses, correct, lr = [], 0, cfg.lr
        batches = range(0, len(order), cfg.batch_size)
        for start in progress(batches, desc=f"epoch {epoch}", total=len(batches)):
            idx = order[start:start + cfg.batch_size]
            x, y = sample_batch(self.train_set, idx, self.net_cfg.frames, SampleMode.TRAIN_RANDOM,
                                rng, dtype=self.network.dtype)
            lr = lr_at(cfg.schedule, self.state.step, total_steps, cfg.lr)
            logits = self.network.forward(x, training=True)
            loss, grad = cross_entropy(logits, y)
            self.network.backward(grad.astype(self.network.dtype, copy=False))
            sgd_step(self.network.parameters(), self.network.gradients(), self.state, cfg,
                     lr=lr, no_decay=no_decay, frozen=frozen)
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == y).sum())
        return float(sum(losses) / len(order)), correct / len(order), lr

    def fit(self) -> List[EpochRecord]:
        cfg = self.train_cfg
        self.logger.info(f"Training {self.net_cfg.preset or 'network'} on {self.task.kind.value}: "
                         f"{len(self.train_set)} clips, {cfg.epochs} epochs, seed {cfg.seed}")
        first = self.state.step // self.steps_per_epoch + 1
        if first > 1:
            self.logger.info(f"Resuming at epoch {first} (step {self.state.step})")
        history = []
        for epoch in range(first, cfg.epochs + 1):
            loss, train_acc, lr = self.train_epoch(epoch)
            val_acc = evaluate(self.network, self.val_set, cfg.eval_batch_size)
            record = EpochRecord(epoch=epoch, loss=loss, train_acc=train_acc, val_acc=val_acc, lr=lr)
            self.logger.info(f"epoch {epoch}: loss {loss:.4f} train {train_acc:.3f} val {val_acc:.3f} lr {lr:.5f}")
            history.append(record)
        return history

    def save(self, path: Path) -> None:
        save_checkpoint(self.network, path, self.state)

    def resume(self, path: Path) -> None:
        """Load weights, BN statistics, momentum buffers and the step counter saved by ``save``."""
        load_checkpoint(self.network, path, optimizer=self.state)


def train(net_cfg: NetworkConfig, task: SyntheticTask, train_cfg: TrainConfig) -> List[EpochRecord]:
    return Trainer(net_cfg, task, train_cfg).fit()


def _eval_batches(dataset: ClipDataset, frames: int, batch_size: int, dtype):
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        yield sample_batch(dataset, idx, frames, SampleMode.EVAL_CENTER, dtype=dtype)


def evaluate(network: Network, dataset: ClipDataset, batch_size: int = 64, workers: int = 1) -> float:
    """Top-1 accuracy with center segment sampling of the network's T frames."""
    if len(dataset) == 0:
        return 0.0
    correct = 0
    for x, y in _eval_batches(dataset, network.cfg.frames, batch_size, network.dtype):
        correct += int((network.predict(x, workers).argmax(axis=1) == y).sum())
    return correct / len(dataset)


def ensemble_predict(networks: Sequence[Network], clips: np.ndarray, workers: int = 1) -> np.ndarray:
    """Mean softmax scores of several networks over the same (N, T, C, H, W) batch."""
    if not networks:
        raise ValueError("ensemble needs at least one network")
    scores = [softmax(net.predict(clips, workers).astype(np.float64)) for net in networks]
    return np.mean(scores, axis=0)


def evaluate_ensemble(networks: Sequence[Network], dataset: ClipDataset, batch_size: int = 64) -> float:
    frames = {net.cfg.frames for net in networks}
    if len(frames) != 1:
        raise SpecError(f"ensemble members sample different frame counts: {sorted(frames)}")
    correct = 0
    for x, y in _eval_batches(dataset, frames.pop(), batch_size, networks[0].dtype):
        correct += int((ensemble_predict(networks, x).argmax(axis=1) == y).sum())
    return correct / max(len(dataset), 1)


def history_to_jsonl(history: Sequence[EpochRecord]) -> str:
    return "".join(json.dumps({"epoch": r.epoch, "loss": r.loss, "train_acc": r.train_acc,
                               "val_acc": r.val_acc, "lr": r.lr}) + "\n" for r in history)


def write_history(history: Sequence[EpochRecord], path: Path) -> None:
    with atomic_write(path, 'w') as f:
        f.write(history_to_jsonl(history))


def read_history(path: Path) -> List[EpochRecord]:
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                records.append(EpochRecord(**json.loads(line)))
    return records

