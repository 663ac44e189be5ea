"""Latency / throughput measurement.

Inputs are generated before the timed region; each measured iteration is one
batched inference pass (or one kernel call) timed with ``time.perf_counter``.
"""
import time
from typing import Callable, Optional, Sequence

import numpy as np

from core.config import NetworkConfig, ShiftSpec
from core.errors import BenchError, SpecError
from core.models import BenchOp, BenchRecord
from modules.nn.network import build_network
from modules.temporal.ops import inverse_shuffle_array, shift_array, shuffle_array
from utils.helpers import progress, resolve_threads
from utils.logger import Logger

logger = Logger.get_logger()


def _time(fn: Callable[[], object], iterations: int, warmup: int, desc: str) -> np.ndarray:
    if iterations < 1:
        raise SpecError(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise SpecError(f"warmup must be >= 0, got {warmup}")
    for _ in range(warmup):
        fn()
    samples = np.empty(iterations, dtype=np.float64)
    for k in progress(range(iterations), desc=desc, total=iterations):
        start = time.perf_counter()
        fn()
        samples[k] = (time.perf_counter() - start) * 1000.0
    return samples


def bench_forward(net_cfg: NetworkConfig, batch: int = 16, iterations: int = 500, warmup: int = 50,
                  threads: Optional[int] = None, seed: int = 0, name: Optional[str] = None) -> BenchRecord:
    """Mean/std latency of inference on a fixed random batch (BN running stats, no dropout)."""
    threads = resolve_threads(threads)
    name = name or net_cfg.preset or "network"
    try:
        network = build_network(net_cfg, seed=seed)
        rng = np.random.default_rng([seed, 4])
        x = rng.standard_normal((batch, net_cfg.frames, net_cfg.in_channels,
                                 net_cfg.input_size, net_cfg.input_size)).astype(network.dtype)
        logger.info(f"Benchmarking {name}: batch {batch}, {warmup} warmup + {iterations} iterations, "
                    f"{threads} threads")
        samples = _time(lambda: network.predict(x, workers=threads), iterations, warmup, f"bench {name}")
    except MemoryError as e:
        raise BenchError(f"out of memory running {name} at batch {batch}") from e
    return BenchRecord(name=name, batch=batch, iterations=iterations, warmup=warmup,
                       mean_ms=float(samples.mean()), std_ms=float(samples.std()), threads=threads)


def _kernel(op: BenchOp, groups: int, shift_spec: ShiftSpec) -> Callable[[np.ndarray], np.ndarray]:
    if op == BenchOp.SHUFFLE:
        return lambda a: shuffle_array(a, groups)
    if op == BenchOp.INVERSE:
        return lambda a: inverse_shuffle_array(a, groups)
    if op == BenchOp.SHIFT:
        return lambda a: shift_array(a, *shift_spec.counts(a.shape[2]))
    return np.copy


def bench_op(op: BenchOp, shape: Sequence[int], iterations: int = 100, warmup: int = 10,
             groups: Optional[int] = None, shift_spec: Optional[ShiftSpec] = None,
             dtype: str = 'f32', seed: int = 0) -> BenchRecord:
    """Time one data-movement kernel; ``bytes_moved`` counts one read and one write of the tensor."""
    op = BenchOp(op)
    if len(shape) != 5:
        raise SpecError(f"kernel benchmarks take an (N, T, C, H, W) shape, got {tuple(shape)}")
    groups = groups or shape[1]
    if op in (BenchOp.SHUFFLE, BenchOp.INVERSE) and shape[2] % groups:
        raise SpecError(f"channels ({shape[2]}) not divisible by groups ({groups})")
    try:
        data = np.random.default_rng(seed).standard_normal(tuple(shape)).astype(np.float32 if dtype == 'f32' else np.float64)
    except MemoryError as e:
        raise BenchError(f"out of memory allocating {tuple(shape)}") from e
    kernel = _kernel(op, groups, shift_spec or ShiftSpec())
    samples = _time(lambda: kernel(data), iterations, warmup, f"bench {op.value}")
    return BenchRecord(name=op.value, batch=shape[0], iterations=iterations, warmup=warmup,
                       mean_ms=float(samples.mean()), std_ms=float(samples.std()),
                       threads=1, bytes_moved=2 * data.nbytes)


def bench_copy(shape: Sequence[int], iterations: int = 100, warmup: int = 10) -> BenchRecord:
    return bench_op(BenchOp.COPY, shape, iterations, warmup)
