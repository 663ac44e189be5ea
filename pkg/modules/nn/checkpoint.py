"""VSNCKPT1 checkpoints: the magic line, then per tensor a name line and a VST1 block.

Name lines read ``<name> <d0>x<d1>...`` with the tensor's own shape; the VST1
block stores it padded to five axes with leading ones.
Optimizer state, when saved, follows as ``optim.step`` and ``optim.<parameter>``.
"""
import math
from pathlib import Path
from typing import BinaryIO, Dict, Optional

import numpy as np

from core.errors import FormatError, ShapeError
from core.models import OptimizerState
from core.tensor import read_vst, write_vst
from utils.helpers import atomic_write
from utils.logger import Logger

CKPT_MAGIC = b'VSNCKPT1\n'
# momentum buffers are stored under this prefix plus the parameter name
OPTIM_PREFIX = 'optim.'

logger = Logger.get_logger()


def _as_5d(array: np.ndarray) -> np.ndarray:
    if array.ndim > 5:
        raise ShapeError(f"cannot store a {array.ndim}-axis tensor in VST1")
    return array.reshape((1,) * (5 - array.ndim) + array.shape)


def write_checkpoint(state: Dict[str, np.ndarray], f: BinaryIO) -> None:
    f.write(CKPT_MAGIC)
    for name, array in state.items():
        if not name or any(ch.isspace() for ch in name):
            raise FormatError(f"tensor name {name!r} must be non-empty without whitespace")
        dims = 'x'.join(str(d) for d in array.shape) or 'scalar'
        f.write(f"{name} {dims}\n".encode('ascii'))
        write_vst(_as_5d(np.asarray(array)), f)


def read_checkpoint(f: BinaryIO) -> Dict[str, np.ndarray]:
    magic = f.read(len(CKPT_MAGIC))
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    state: Dict[str, np.ndarray] = {}
    while True:
        line = f.readline()
        if not line:
            return state
        parts = line.decode('ascii', errors='replace').split()
        if len(parts) != 2:
            raise FormatError(f"bad checkpoint name line {line!r}")
        name, dims = parts
        try:
            shape = () if dims == 'scalar' else tuple(int(d) for d in dims.split('x'))
        except ValueError as e:
            raise FormatError(f"bad shape {dims!r} for tensor {name}") from e
        data = read_vst(f).data
        if data.size != math.prod(shape):
            raise FormatError(f"{name}: header shape {shape} does not match {data.size} stored values")
        state[name] = data.reshape(shape)


def _optimizer_tensors(optimizer: OptimizerState) -> Dict[str, np.ndarray]:
    tensors = {f"{OPTIM_PREFIX}step": np.array(float(optimizer.step))}
    tensors.update({f"{OPTIM_PREFIX}{name}": buf for name, buf in optimizer.buffers.items()})
    return tensors


def save_checkpoint(network, path: Path, optimizer: Optional[OptimizerState] = None) -> None:
    """Parameters and BN running statistics of ``network``, plus optimizer state if given, written atomically."""
    state = network.state()
    if optimizer is not None:
        state.update(_optimizer_tensors(optimizer))
    with atomic_write(path, 'wb') as f:
        write_checkpoint(state, f)
    logger.info(f"Saved checkpoint with {len(state)} tensors to {path}")


def load_checkpoint(network, path: Path, strict: bool = True, optimizer: Optional[OptimizerState] = None) -> None:
    """Copy stored tensors into ``network`` (and ``optimizer``) in place.

    Every name and shape is checked before the first copy, so a rejected
    checkpoint leaves the network and optimizer unchanged. Stored optimizer
    state is ignored when no ``optimizer`` is given.
    """
    with open(path, 'rb') as f:
        stored = read_checkpoint(f)
    saved_optim = {k[len(OPTIM_PREFIX):]: v for k, v in stored.items() if k.startswith(OPTIM_PREFIX)}
    stored = {k: v for k, v in stored.items() if not k.startswith(OPTIM_PREFIX)}
    targets = network.state()
    missing = sorted(set(targets) - set(stored))
    unexpected = sorted(set(stored) - set(targets))
    if strict and (missing or unexpected):
        raise FormatError(f"checkpoint mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
    shared = [name for name in targets if name in stored]
    for name in shared:
        if stored[name].shape != targets[name].shape:
            raise ShapeError(f"{name}: checkpoint shape {stored[name].shape} != network shape {targets[name].shape}")

    restore_optim = optimizer is not None and bool(saved_optim)
    if restore_optim:
        params = network.parameters()
        if 'step' not in saved_optim:
            raise FormatError("checkpoint optimizer state has no step counter")
        for name, buf in saved_optim.items():
            if name == 'step':
                continue
            if name not in params:
                raise FormatError(f"momentum buffer {name} has no matching parameter")
            if buf.shape != params[name].shape:
                raise ShapeError(f"{name}: momentum buffer shape {buf.shape} != parameter shape {params[name].shape}")
    elif optimizer is not None:
        logger.warning(f"{path} holds no optimizer state; momentum and step start from zero")

    for name in shared:
        targets[name][...] = stored[name]
    if restore_optim:
        optimizer.step = int(saved_optim.pop('step'))
        optimizer.buffers = {name: buf.astype(params[name].dtype, copy=False) for name, buf in saved_optim.items()}
    logger.info(f"Loaded {len(targets) - len(missing)} tensors from {path}")
