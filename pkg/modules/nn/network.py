from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Union

import numpy as np

from core.config import NetworkConfig
from core.errors import ShapeError
from core.interfaces import Layer
from core.models import BatchNormParams, BlockVariant, LinearParams
from core.tensor import VideoTensor, as_dtype
from modules.nn.blocks import (BatchNorm, Bottleneck, Conv2d, GlobalAvgPool, LinearHead,
                               MaxPool, ReLU, Sequential)
from utils.logger import Logger


class Network(Layer):
    """conv1 (7x7/2) > BN > ReLU > maxpool (3x3/2) > res2..res5 > avg pool > dropout > fc."""

    def __init__(self, cfg: NetworkConfig, stem: Sequential, blocks: List[Bottleneck],
                 pool: GlobalAvgPool, head: LinearHead, dtype: np.dtype):
        self.name = cfg.preset or "network"
        self.cfg = cfg
        self.stem = stem
        self.blocks = blocks
        self.pool = pool
        self.head = head
        self.dtype = dtype
        self._layers: List[Layer] = [stem, *blocks, pool, head]

    def _as_array(self, x: Union[np.ndarray, VideoTensor]) -> np.ndarray:
        data = x.data if isinstance(x, VideoTensor) else np.asarray(x)
        if data.ndim != 5:
            raise ShapeError(f"network input must be (N, T, C, H, W), got shape {data.shape}")
        _, t, c, _, _ = data.shape
        if t != self.cfg.frames:
            raise ShapeError(f"network built for T={self.cfg.frames}, input has T={t}")
        if c != self.cfg.in_channels:
            raise ShapeError(f"network expects {self.cfg.in_channels} input channels, got {c}")
        return data.astype(self.dtype, copy=False)

    def forward(self, x, training=False, cache=True):
        out = self._as_array(x)
        for layer in self._layers:
            out = layer.forward(out, training, cache)
        return out

    def backward(self, grad):
        for layer in reversed(self._layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x, workers: int = 1) -> np.ndarray:
        """Inference-mode logits; with workers > 1 the batch is split across threads."""
        data = self._as_array(x)
        if workers <= 1 or data.shape[0] == 1:
            return self.forward(data, training=False, cache=False)
        chunks = np.array_split(data, min(workers, data.shape[0]))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: self.forward(c, training=False, cache=False), chunks))
        return np.concatenate(parts, axis=0)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {k: v for layer in self._layers for k, v in layer.parameters().items()}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {k: v for layer in self._layers for k, v in layer.gradients().items()}

    def batchnorms(self) -> List[BatchNorm]:
        found = [layer for layer in self.stem.layers if isinstance(layer, BatchNorm)]
        for block in self.blocks:
            found += [layer for layer in block.sublayers() if isinstance(layer, BatchNorm)]
        return found

    def buffers(self) -> Dict[str, np.ndarray]:
        return {k: v for bn in self.batchnorms() for k, v in bn.buffers().items()}

    def state(self) -> Dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def reseed_dropout(self, rng: np.random.Generator) -> None:
        self.head.rng = rng

    def no_decay(self) -> set:
        """BN scale/offset and biases are exempt from weight decay."""
        return {k for k in self.parameters() if k.endswith(('.gamma', '.beta', '.bias'))}

    def frozen(self) -> set:
        return {k for bn in self.batchnorms() if bn.p.frozen for k in bn.parameters()}

    def freeze_bn(self, keep_stem: bool = True) -> None:
        """Freeze every BN layer (running statistics, affine terms) except the one after conv1."""
        for i, bn in enumerate(self.batchnorms()):
            bn.p.frozen = not (keep_stem and i == 0)

    def set_update_stats(self, enabled: bool) -> None:
        for bn in self.batchnorms():
            bn.update_stats = enabled

    def variant_counts(self) -> Dict[BlockVariant, int]:
        counts: Dict[BlockVariant, int] = {}
        for block in self.blocks:
            counts[block.variant] = counts.get(block.variant, 0) + 1
        return counts

    def stage_outputs(self, x) -> Dict[str, tuple]:
        """Output shape after the stem and after each stage, from an inference pass."""
        out = self._as_array(x)
        shapes = {}
        out = self.stem.forward(out, False, False)
        shapes['stem'] = out.shape
        for block in self.blocks:
            out = block.forward(out, False, False)
            shapes[block.name.split('.')[0]] = out.shape
        return shapes


def build_network(cfg: NetworkConfig, seed: int = 0, dtype: str = 'f32') -> Network:
    logger = Logger.get_logger()
    np_dtype = as_dtype(dtype)
    rng = np.random.default_rng(seed)
    groups = cfg.shuffle_groups

    stem = Sequential("stem", [
        Conv2d.create("conv1", cfg.in_channels, cfg.stem_width, 7, 2, 3, rng, np_dtype),
        BatchNorm("bn1", BatchNormParams.identity(cfg.stem_width, np_dtype)),
        ReLU("relu1"),
        MaxPool("maxpool"),
    ])

    blocks: List[Bottleneck] = []
    in_channels = cfg.stem_width
    for s, stage in enumerate(cfg.stages):
        for i in range(stage.blocks):
            block = Bottleneck(
                f"res{s + 2}.{i}", cfg.variant_at(s, i), in_channels, stage.width,
                stage.stride if i == 0 else 1, groups, rng, cfg.shift_spec,
                expansion=cfg.expansion, dtype=np_dtype,
            )
            blocks.append(block)
            in_channels = block.out_channels

    head_params = LinearParams(
        weight=(rng.standard_normal((cfg.classes, in_channels)) * 0.01).astype(np_dtype),
        bias=np.zeros(cfg.classes, dtype=np_dtype),
    )
    head = LinearHead("fc", head_params, cfg.dropout, rng=np.random.default_rng([seed, 1]))
    network = Network(cfg, stem, blocks, GlobalAvgPool(), head, np_dtype)
    logger.debug(f"Built {network.name}: {len(blocks)} blocks, variants "
                 f"{ {v.value: n for v, n in network.variant_counts().items()} }")
    return network

