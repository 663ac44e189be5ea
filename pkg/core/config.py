"""Validated configuration models.

Specs for the temporal operators, the network layout (with presets matching
the ResNet-50/101 backbones and their scaled-down toy/tiny versions), the
training run, the synthetic task and application settings.
"""
import math
import os
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import SpecError
from core.models import BlockVariant, SampleMode, TaskKind
from utils.helpers import DEFAULT_SETTINGS_PATH, load_yaml


def check_divisibility(name: str, variant: BlockVariant, in_channels: int, width: int,
                       out_channels: int, groups: int) -> None:
    """Channel counts a shuffle block regroups must split evenly into ``groups``."""
    if variant == BlockVariant.COMPACT and width % groups:
        raise SpecError(f"{name}: compact block width {width} not divisible by {groups} groups")
    if variant == BlockVariant.HEADTAIL:
        for label, channels in (("input", in_channels), ("output", out_channels)):
            if channels % groups:
                raise SpecError(f"{name}: headtail block {label} channels {channels} "
                                f"not divisible by {groups} groups")


class ShuffleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_frames: int = Field(ge=1)
    channels: int = Field(ge=1)
    groups: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _check_divisible(self):
        if self.channels % self.num_groups != 0:
            raise ValueError(
                f"channels ({self.channels}) not divisible by groups ({self.num_groups})"
            )
        return self

    @property
    def num_groups(self) -> int:
        return self.groups if self.groups is not None else self.t_frames

    @property
    def eta(self) -> int:
        return self.channels // self.num_groups


class ShiftSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    fraction_fwd: float = Field(default=0.125, ge=0.0, le=1.0)
    fraction_bwd: float = Field(default=0.125, ge=0.0, le=1.0)

    @model_validator(mode='after')
    def _check_total(self):
        if self.fraction_fwd + self.fraction_bwd > 1.0:
            raise ValueError(
                f"shift fractions sum to {self.fraction_fwd + self.fraction_bwd} > 1"
            )
        return self

    def counts(self, channels: int) -> Tuple[int, int]:
        """Channels moved forward and backward in time (floors of fraction * C)."""
        fwd = math.floor(self.fraction_fwd * channels + 1e-9)
        bwd = math.floor(self.fraction_bwd * channels + 1e-9)
        return fwd, bwd


class SamplerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_frames: int = Field(ge=1)
    num_segments: int = Field(default=8, ge=1)
    mode: SampleMode = SampleMode.EVAL_CENTER
    seed: int = Field(default=0, ge=0)


class StageSpec(BaseModel):
    blocks: int = Field(ge=1)
    width: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)


class BlockOverride(BaseModel):
    stage: int = Field(ge=0)
    index: int = Field(ge=0)
    variant: BlockVariant


_R50_DEPTHS = (3, 4, 6, 3)
_R101_DEPTHS = (3, 4, 23, 3)
_WIDTHS = (64, 128, 256, 512)
_STRIDES = (1, 2, 2, 2)

BACKBONES = {
    'r50': dict(depths=_R50_DEPTHS, widths=_WIDTHS, stem=64, input_size=224, in_channels=3,
                frames=8, classes=174, dropout=0.8),
    'r101': dict(depths=_R101_DEPTHS, widths=_WIDTHS, stem=64, input_size=224, in_channels=3,
                 frames=8, classes=174, dropout=0.8),
    'toy': dict(depths=(2, 2, 2, 2), widths=tuple(w // 8 for w in _WIDTHS), stem=8, input_size=32,
                in_channels=1, frames=8, classes=2, dropout=0.5),
    'tiny': dict(depths=(2, 1, 1, 1), widths=(4, 8, 8, 8), stem=4, input_size=8,
                 in_channels=1, frames=4, classes=3, dropout=0.0),
}

# family -> (shuffle variant placed last in each stage, temporal shift on the other blocks)
FAMILIES = {
    'vsn': (BlockVariant.COMPACT, True),
    'compact': (BlockVariant.COMPACT, False),
    'headtail': (BlockVariant.HEADTAIL, False),
    'tsm': (None, True),
    'tsn': (None, False),
}


class NetworkConfig(BaseModel):
    preset: Optional[str] = None
    frames: int = Field(default=8, ge=1)
    classes: int = Field(default=174, ge=1)
    input_size: int = Field(default=224, ge=1)
    in_channels: int = Field(default=3, ge=1)
    stem_width: int = Field(default=64, ge=1)
    stages: List[StageSpec] = Field(
        default_factory=lambda: [StageSpec(blocks=d, width=w, stride=s)
                                 for d, w, s in zip(_R50_DEPTHS, _WIDTHS, _STRIDES)]
    )
    expansion: int = Field(default=4, ge=1)
    dropout: float = Field(default=0.8, ge=0.0, lt=1.0)
    groups: Optional[int] = Field(default=None, ge=1)
    shuffle_variant: Optional[BlockVariant] = BlockVariant.COMPACT
    shuffle_stages: Optional[List[int]] = None
    shift: bool = True
    shift_spec: ShiftSpec = Field(default_factory=ShiftSpec)
    overrides: List[BlockOverride] = Field(default_factory=list)

    @model_validator(mode='after')
    def _check_layout(self):
        if self.shuffle_variant is not None and not self.shuffle_variant.shuffles:
            raise ValueError(f"shuffle_variant must be headtail or compact, got {self.shuffle_variant.value}")
        for stage in self.shuffle_stages or []:
            if stage >= len(self.stages):
                raise ValueError(f"shuffle stage {stage} out of range for {len(self.stages)} stages")
        for o in self.overrides:
            if o.stage >= len(self.stages) or o.index >= self.stages[o.stage].blocks:
                raise ValueError(f"override ({o.stage}, {o.index}) is outside the network layout")
        in_channels = self.stem_width
        for s, stage in enumerate(self.stages):
            for i in range(stage.blocks):
                out_channels = stage.width * self.expansion
                check_divisibility(f"res{s + 2}.{i}", self.variant_at(s, i), in_channels, stage.width,
                                   out_channels, self.shuffle_groups)
                in_channels = out_channels
        return self

    @property
    def shuffle_groups(self) -> int:
        return self.groups if self.groups is not None else self.frames

    def variant_at(self, stage: int, index: int) -> BlockVariant:
        for o in self.overrides:
            if (o.stage, o.index) == (stage, index):
                return o.variant
        last = index == self.stages[stage].blocks - 1
        stages = range(len(self.stages)) if self.shuffle_stages is None else self.shuffle_stages
        if last and self.shuffle_variant is not None and stage in stages:
            return self.shuffle_variant
        return BlockVariant.STANDARD_WITH_SHIFT if self.shift else BlockVariant.STANDARD

    def variants(self) -> List[List[BlockVariant]]:
        return [[self.variant_at(s, i) for i in range(spec.blocks)] for s, spec in enumerate(self.stages)]

    @classmethod
    def from_preset(cls, name: str, **updates) -> 'NetworkConfig':
        """Build a preset such as ``vsn-r50``, ``toy-vsn`` or ``tiny-headtail``.

        The name joins a family (vsn, compact, headtail, tsm, tsn) and a
        backbone (r50, r101, toy, tiny) with a dash, in either order.
        """
        tokens = name.lower().split('-')
        backbone = next((t for t in tokens if t in BACKBONES), None)
        family = next((t for t in tokens if t in FAMILIES), None)
        if backbone is None or family is None or len(tokens) != 2:
            raise ValueError(
                f"unknown preset {name!r}; expected <family>-<backbone> with family in "
                f"{sorted(FAMILIES)} and backbone in {sorted(BACKBONES)}"
            )
        base = BACKBONES[backbone]
        variant, shift = FAMILIES[family]
        fields = dict(
            preset=name,
            frames=base['frames'],
            classes=base['classes'],
            input_size=base['input_size'],
            in_channels=base['in_channels'],
            stem_width=base['stem'],
            stages=[StageSpec(blocks=d, width=w, stride=s)
                    for d, w, s in zip(base['depths'], base['widths'], _STRIDES)],
            dropout=base['dropout'],
            shuffle_variant=variant,
            shift=shift,
        )
        fields.update({k: v for k, v in updates.items() if v is not None})
        return cls.model_validate(fields)


class MultiStepSchedule(BaseModel):
    kind: Literal['multistep'] = 'multistep'
    milestones: List[int] = Field(default_factory=list)  # in steps
    gamma: float = Field(default=0.1, gt=0.0)


class CosineSchedule(BaseModel):
    kind: Literal['cosine'] = 'cosine'
    warmup_steps: int = Field(default=0, ge=0)


Schedule = Annotated[Union[MultiStepSchedule, CosineSchedule], Field(discriminator='kind')]


class TrainConfig(BaseModel):
    lr: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    dropout: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    batch_size: int = Field(default=16, ge=1)
    eval_batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=10, ge=1)
    schedule: Schedule = Field(default_factory=MultiStepSchedule)
    seed: int = Field(default=0, ge=0)
    freeze_bn: bool = False
    flip: bool = False
    dtype: Literal['f32', 'f64'] = 'f32'


class SyntheticTask(BaseModel):
    kind: TaskKind = TaskKind.FRAME_ORDER
    num_classes: Optional[int] = None
    clip_length: int = Field(default=16, ge=1)
    frame_size: int = Field(default=16, ge=1)
    num_train: int = Field(default=2000, ge=1)
    num_val: int = Field(default=400, ge=1)
    noise_std: float = Field(default=0.05, ge=0.0)
    seed: int = Field(default=0, ge=0)
    # frame_order blob size is held constant within each of this many equal spans;
    # the trainer sets it to the network's frame count
    segments: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _check_classes(self):
        expected = 4 if self.kind == TaskKind.MOTION_DIRECTION else 2
        if self.num_classes is None:
            self.num_classes = expected
        elif self.num_classes != expected:
            raise ValueError(f"{self.kind.value} has {expected} classes, got {self.num_classes}")
        if self.segments is not None and self.clip_length % self.segments:
            raise ValueError(f"clip_length {self.clip_length} is not a multiple of segments {self.segments}")
        return self


class LoggingSettings(BaseModel):
    level: str = 'INFO'
    file: Optional[str] = None


class BenchSettings(BaseModel):
    batch: int = Field(default=16, ge=1)
    iterations: int = Field(default=500, ge=1)
    warmup: int = Field(default=50, ge=0)


class Settings(BaseModel):
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    progress: bool = True
    threads: Optional[int] = Field(default=None, ge=1)
    bench: BenchSettings = Field(default_factory=BenchSettings)


class RunConfig(BaseModel):
    """A run file: network keys at the top level plus optional train/task sections."""

    network: NetworkConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    task: SyntheticTask = Field(default_factory=SyntheticTask)

    @classmethod
    def from_mapping(cls, data: dict) -> 'RunConfig':
        data = dict(data)
        train = data.pop('train', None) or {}
        task = data.pop('task', None) or {}
        preset = data.pop('preset', None)
        if 'shift' in data and isinstance(data['shift'], dict):
            data['shift_spec'] = data.pop('shift')
        network = (NetworkConfig.from_preset(preset, **data) if preset
                   else NetworkConfig.model_validate(data))
        return cls(network=network, train=TrainConfig.model_validate(train),
                   task=SyntheticTask.model_validate(task))


def load_settings(path: Optional[Path] = None) -> Settings:
    path = Path(path or os.environ.get('VSHUFFLE_CONFIG') or DEFAULT_SETTINGS_PATH)
    if not path.exists():
        return Settings()
    return Settings.model_validate(load_yaml(path))


def load_run_config(path: Path) -> RunConfig:
    return RunConfig.from_mapping(load_yaml(path))
