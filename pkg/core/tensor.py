"""Dense (N, T, C, H, W) video tensors.

Every operation here returns freshly allocated arrays; inputs are never
modified and results never alias their arguments.
"""
import io
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, Tuple, Union

import numpy as np

from core.errors import FormatError, ShapeError
from utils.helpers import atomic_write

AXES = ('N', 'T', 'C', 'H', 'W')
VST_MAGIC = b'VST1\n'
_DTYPES = {'f32': np.dtype('<f4'), 'f64': np.dtype('<f8')}


@dataclass(frozen=True)
class Shape:
    dims: Tuple[int, ...]
    labels: Tuple[str, ...] = AXES

    def __post_init__(self):
        if len(self.dims) != len(self.labels):
            raise ShapeError(f"{len(self.dims)} dims for axes {self.labels}")
        for label, dim in zip(self.labels, self.dims):
            if label not in AXES:
                raise ShapeError(f"unknown axis label {label!r}")
            if int(dim) < 1:
                raise ShapeError(f"axis {label} must be >= 1, got {dim}")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))


class VideoTensor:
    """Row-major (N, T, C, H, W) array of f32 (default) or f64 values."""

    __slots__ = ('data',)

    def __init__(self, data: np.ndarray, dtype: Union[str, np.dtype, None] = None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(as_dtype(dtype), copy=False)
        elif array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float32)
        if array.ndim != 5:
            raise ShapeError(f"video tensor needs 5 axes (N,T,C,H,W), got shape {array.shape}")
        if min(array.shape) < 1:
            raise ShapeError(f"all axes must be >= 1, got {array.shape}")
        self.data = np.ascontiguousarray(array)

    @property
    def shape(self) -> Tuple[int, int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def h(self) -> int:
        return self.data.shape[3]

    @property
    def w(self) -> int:
        return self.data.shape[4]

    def copy(self) -> 'VideoTensor':
        return VideoTensor(self.data.copy())

    def __repr__(self) -> str:
        return f"VideoTensor(shape={self.shape}, dtype={self.dtype.name})"


def as_dtype(dtype: Union[str, np.dtype]) -> np.dtype:
    if isinstance(dtype, str) and dtype in _DTYPES:
        return _DTYPES[dtype].newbyteorder('=')
    resolved = np.dtype(dtype)
    if resolved not in (np.float32, np.float64):
        raise ShapeError(f"unsupported dtype {resolved}; use f32 or f64")
    return resolved


def _dtype_tag(dtype: np.dtype) -> str:
    return 'f64' if dtype == np.float64 else 'f32'


def alloc_zeros(shape: Union[Shape, Sequence[int]], dtype: str = 'f32') -> VideoTensor:
    dims = shape.dims if isinstance(shape, Shape) else tuple(shape)
    if len(dims) != 5 or any(int(d) < 1 for d in dims):
        raise ShapeError(f"alloc_zeros needs five positive dims, got {dims}")
    return VideoTensor(np.zeros(dims, dtype=as_dtype(dtype)))


def slice_channels(x: VideoTensor, frame: int, lo: int, hi: int) -> VideoTensor:
    """Copy of channels [lo, hi) of one frame, shaped (N, 1, hi-lo, H, W)."""
    if not 0 <= frame < x.t:
        raise ShapeError(f"frame {frame} out of range for T={x.t}")
    if not 0 <= lo < hi <= x.c:
        raise ShapeError(f"channel range [{lo}, {hi}) invalid for C={x.c}")
    return VideoTensor(x.data[:, frame:frame + 1, lo:hi].copy())


def concat_channels(parts: Sequence[VideoTensor]) -> VideoTensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    n, t, _, h, w = parts[0].shape
    for i, part in enumerate(parts):
        if (part.n, part.t, part.h, part.w) != (n, t, h, w):
            raise ShapeError(
                f"part {i} has shape {part.shape}; expected N,T,H,W = {(n, t, h, w)}"
            )
    dtype = np.result_type(*(p.dtype for p in parts))
    return VideoTensor(np.concatenate([p.data.astype(dtype, copy=False) for p in parts], axis=2))


def approx_equal(a: VideoTensor, b: VideoTensor, tol: float = 0.0) -> bool:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if tol < 0:
        raise ValueError(f"tolerance must be non-negative, got {tol}")
    return bool(np.all(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)) <= tol))


def l2_norm(x: VideoTensor) -> float:
    flat = x.data.reshape(-1).astype(np.float64)
    return float(np.sqrt(np.dot(flat, flat)))


def sorted_values(x: VideoTensor) -> np.ndarray:
    return np.sort(x.data, axis=None)


def all_finite(x: VideoTensor) -> bool:
    return bool(np.isfinite(x.data).all())


# --- VST1 dump -------------------------------------------------------------

def write_vst(x: Union[VideoTensor, np.ndarray], f: BinaryIO) -> None:
    data = x.data if isinstance(x, VideoTensor) else np.asarray(x)
    if data.ndim != 5:
        raise ShapeError(f"VST1 stores 5-axis tensors, got shape {data.shape}")
    tag = _dtype_tag(data.dtype)
    f.write(VST_MAGIC)
    f.write((' '.join(str(d) for d in data.shape) + f' {tag}\n').encode('ascii'))
    f.write(np.ascontiguousarray(data, dtype=_DTYPES[tag]).tobytes())


def _remaining(f: BinaryIO) -> int:
    if not f.seekable():
        return sys.maxsize
    here = f.tell()
    end = f.seek(0, io.SEEK_END)
    f.seek(here)
    return end - here


def read_vst(f: BinaryIO) -> VideoTensor:
    magic = f.read(len(VST_MAGIC))
    if magic != VST_MAGIC:
        raise FormatError(f"bad VST1 magic {magic!r}")
    header = f.readline().decode('ascii', errors='replace').split()
    if len(header) != 6 or header[5] not in _DTYPES:
        raise FormatError(f"bad VST1 header {' '.join(header)!r}")
    try:
        dims = tuple(int(d) for d in header[:5])
    except ValueError as e:
        raise FormatError(f"bad VST1 dims {header[:5]}") from e
    if any(d < 1 for d in dims):
        raise FormatError(f"VST1 dims must be positive, got {dims}")
    dtype = _DTYPES[header[5]]
    nbytes = math.prod(dims) * dtype.itemsize
    available = _remaining(f)
    if nbytes > available:
        raise FormatError(f"VST1 header {dims} needs {nbytes} bytes, only {available} left")
    payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"VST1 payload truncated: {len(payload)} of {nbytes} bytes")
    values = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder('='))
    return VideoTensor(values.reshape(dims))


def save_tensor(x: VideoTensor, path: Path) -> None:
    with atomic_write(path, 'wb') as f:
        write_vst(x, f)


def load_tensor(path: Path) -> VideoTensor:
    with open(path, 'rb') as f:
        return read_vst(f)

