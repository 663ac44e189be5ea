"""Synthetic temporal-sensitive clip tasks.

Clips are grayscale (clip_length, 1, H, W) arrays holding one Gaussian blob.

motion_direction  the blob travels up, down, left or right (labels 0..3)
frame_order       the blob grows (label 0) or shrinks (label 1); a shrinking
                  clip is a growing clip played backwards, so any single frame
                  or the unordered frame set says nothing about the label.
                  With ``segments`` set the size steps once per segment span,
                  which keeps that true for segment-sampled frames too
"""
from abc import abstractmethod
from typing import Optional, Sequence, Tuple

import numpy as np

from core.config import SamplerSpec, SyntheticTask
from core.errors import ShapeError, SpecError
from core.interfaces import TaskGenerator
from core.models import ClipDataset, SampleMode, TaskKind
from modules.temporal.sampler import segment_sample

MIN_FRAME_SIZE = 8

UP, DOWN, LEFT, RIGHT = range(4)
# unit displacement (dy, dx) per direction label
_DIRECTIONS = {UP: (-1.0, 0.0), DOWN: (1.0, 0.0), LEFT: (0.0, -1.0), RIGHT: (0.0, 1.0)}
_REVERSED_DIRECTION = {UP: DOWN, DOWN: UP, LEFT: RIGHT, RIGHT: LEFT}

GROWING, SHRINKING = 0, 1


def _blob(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    grid = np.arange(size, dtype=np.float64)
    dist2 = (grid[:, None] - cy) ** 2 + (grid[None, :] - cx) ** 2
    return np.exp(-dist2 / (2.0 * sigma ** 2))


def _balanced_labels(count: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(count) % num_classes)


class _BlobTask(TaskGenerator):
    def __init__(self, clip_length: int, frame_size: int, noise_std: float):
        if frame_size < MIN_FRAME_SIZE:
            raise SpecError(f"frame_size {frame_size} too small for a blob trajectory (need >= {MIN_FRAME_SIZE})")
        if clip_length < 2:
            raise SpecError(f"clip_length must be >= 2 to carry temporal order, got {clip_length}")
        self.clip_length = clip_length
        self.frame_size = frame_size
        self.noise_std = noise_std

    def _noisy(self, frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.noise_std > 0:
            frames = frames + rng.normal(0.0, self.noise_std, frames.shape)
        return frames[:, None].astype(np.float32)

    @abstractmethod
    def render(self, label: int, rng: np.random.Generator) -> np.ndarray:
        """One forward-ordered clip carrying ``label``."""

    def generate(self, count: int, rng: np.random.Generator) -> ClipDataset:
        labels = _balanced_labels(count, self.num_classes, rng)
        clips = np.stack([self.render(int(label), rng) for label in labels]) if count else \
            np.zeros((0, self.clip_length, 1, self.frame_size, self.frame_size), dtype=np.float32)
        return ClipDataset(clips=clips, labels=labels.astype(np.int64))


class MotionDirectionTask(_BlobTask):
    num_classes = 4

    def reversed_label(self, label: int) -> int:
        return _REVERSED_DIRECTION[label]

    def render(self, label: int, rng: np.random.Generator) -> np.ndarray:
        size = self.frame_size
        margin = size / 8.0
        travel = (size - 1 - 2 * margin) / 2.0
        sigma = max(0.8, size / 16.0)
        dy, dx = _DIRECTIONS[label]
        # start so the whole path stays inside [margin, size - 1 - margin]
        lo, hi = margin, size - 1 - margin
        start_y = rng.uniform(lo + travel * max(-dy, 0.0), hi - travel * max(dy, 0.0))
        start_x = rng.uniform(lo + travel * max(-dx, 0.0), hi - travel * max(dx, 0.0))
        steps = np.linspace(0.0, travel, self.clip_length)
        frames = np.stack([_blob(size, start_y + dy * s, start_x + dx * s, sigma) for s in steps])
        return self._noisy(frames, rng)


class FrameOrderTask(_BlobTask):
    num_classes = 2

    def __init__(self, clip_length: int, frame_size: int, noise_std: float, segments: Optional[int] = None):
        super().__init__(clip_length, frame_size, noise_std)
        if segments is not None and clip_length % segments:
            raise SpecError(f"clip_length {clip_length} is not a multiple of segments {segments}")
        self.segments = segments

    def _sigmas(self, small: float, large: float) -> np.ndarray:
        if self.segments is None:
            return np.linspace(small, large, self.clip_length)
        # one size per sampler span, so the frames drawn from a clip and from its
        # reversal hold the same sizes
        levels = np.linspace(small, large, self.segments)
        return np.repeat(levels, self.clip_length // self.segments)

    def reversed_label(self, label: int) -> int:
        return SHRINKING if label == GROWING else GROWING

    def render(self, label: int, rng: np.random.Generator) -> np.ndarray:
        size = self.frame_size
        small = rng.uniform(0.6, 1.0) * size / 16.0
        large = rng.uniform(3.0, 4.0) * size / 16.0
        cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
        sigmas = self._sigmas(small, large)
        growing = self._noisy(np.stack([_blob(size, cy, cx, s) for s in sigmas]), rng)
        return growing if label == GROWING else growing[::-1].copy()


def make_task(task: SyntheticTask) -> TaskGenerator:
    if task.kind == TaskKind.MOTION_DIRECTION:
        return MotionDirectionTask(task.clip_length, task.frame_size, task.noise_std)
    return FrameOrderTask(task.clip_length, task.frame_size, task.noise_std, task.segments)


def gen_dataset(task: SyntheticTask) -> Tuple[ClipDataset, ClipDataset]:
    """(train, val) clip sets, fully determined by ``task.seed``."""
    return make_task(task).split(task.num_train, task.num_val, task.seed)


def reverse_clip(clip: np.ndarray) -> np.ndarray:
    return clip[::-1].copy()


def sample_batch(dataset: ClipDataset, indices: Sequence[int], frames: int, mode: SampleMode,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
    """Segment-sample ``frames`` frames from each indexed clip into an (N, T, 1, H, W) batch.

    ``train_random`` draws a fresh sampler seed per clip from ``rng``.
    """
    if mode == SampleMode.TRAIN_RANDOM and rng is None:
        raise ValueError("random sampling needs a random generator")
    clip_length = dataset.clips.shape[1]
    if len(indices) == 0:
        raise ShapeError("cannot sample an empty batch")
    batch = []
    for idx in indices:
        seed = int(rng.integers(0, 2 ** 31)) if mode == SampleMode.TRAIN_RANDOM else 0
        picks = segment_sample(SamplerSpec(total_frames=clip_length, num_segments=frames, mode=mode, seed=seed))
        batch.append(dataset.clips[idx, picks])
    return np.stack(batch).astype(dtype), dataset.labels[np.asarray(indices)]
