from enum import Enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


class BlockVariant(str, Enum):
    STANDARD = "standard"
    HEADTAIL = "headtail"
    COMPACT = "compact"
    STANDARD_WITH_SHIFT = "standard_with_shift"

    @property
    def shuffles(self) -> bool:
        return self in (BlockVariant.HEADTAIL, BlockVariant.COMPACT)


class SampleMode(str, Enum):
    TRAIN_RANDOM = "train_random"
    EVAL_CENTER = "eval_center"


class TaskKind(str, Enum):
    MOTION_DIRECTION = "motion_direction"
    FRAME_ORDER = "frame_order"


class BenchOp(str, Enum):
    SHUFFLE = "shuffle"
    INVERSE = "inverse"
    SHIFT = "shift"
    COPY = "copy"


@dataclass
class Conv2dParams:
    weight: np.ndarray  # (out, in, k_h, k_w)
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> Tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    frozen: bool = False

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> 'BatchNormParams':
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray


@dataclass
class CostEntry:
    name: str
    kind: str
    params: int = 0
    madds: int = 0
    # BN / ReLU / pooling work; listed for audit, kept out of the headline
    elementwise: int = 0
    output_shape: Tuple[int, ...] = ()


@dataclass
class CostReport:
    entries: List[CostEntry]
    input_shape: Tuple[int, ...]
    convention: str = (
        "madds: conv = out_h*out_w*out_c*in_c*k_h*k_w per frame summed over T frames (N=1); "
        "linear = in*out once per clip. GFLOPs headline = conv + linear madds. "
        "ops = 2*madds. elementwise: BN 2/elem, ReLU 1/elem, maxpool k*k/output, "
        "avgpool 1/input elem; excluded from the headline. shuffle/shift: 0."
    )

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_madds(self) -> int:
        return sum(e.madds for e in self.entries)

    @property
    def total_ops(self) -> int:
        return 2 * self.total_madds

    @property
    def total_elementwise(self) -> int:
        return sum(e.elementwise for e in self.entries)

    @property
    def gflops(self) -> float:
        return self.total_madds / 1e9

    def by_kind(self, kind: str) -> List[CostEntry]:
        return [e for e in self.entries if e.kind == kind]


@dataclass
class OptimizerState:
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class LayerCheck:
    name: str
    shape: Tuple[int, ...]
    coords_checked: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    checks: List[LayerCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    lr: float


@dataclass
class ClipDataset:
    clips: np.ndarray  # (M, clip_length, 1, H, W)
    labels: np.ndarray  # (M,)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class BenchRecord:
    name: str
    batch: int
    iterations: int
    warmup: int
    mean_ms: float
    std_ms: float
    threads: int = 1
    bytes_moved: Optional[int] = None

    CSV_COLUMNS = ("name", "batch", "iters", "mean_ms", "std_ms", "vps")

    @property
    def vps(self) -> float:
        return self.batch / (self.mean_ms / 1000.0) if self.mean_ms > 0 else float('inf')

    @property
    def bytes_per_second(self) -> Optional[float]:
        if self.bytes_moved is None or self.mean_ms <= 0:
            return None
        return self.bytes_moved / (self.mean_ms / 1000.0)
