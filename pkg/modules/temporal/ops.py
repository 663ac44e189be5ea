"""Video shuffle, its inverse and the temporal shift.

All of these are pure data movement: they allocate a new array and copy
values into it, performing no arithmetic on the values themselves.

The array kernels (``*_array``) work on raw ``(N, T, C, H, W)`` ndarrays and
are what the network blocks call; the ``VideoTensor`` wrappers validate
against a spec first.
"""
import numpy as np

from core.config import ShiftSpec, ShuffleSpec
from core.errors import SpecError
from core.tensor import VideoTensor


def shuffle_array(data: np.ndarray, groups: int) -> np.ndarray:
    """out[n, i, j*eta + r] = in[n, j, i*eta + r] when groups == T.

    In general the per-sample (T, groups, eta) block is transposed to
    (groups, T, eta) and read back as (T, C).
    """
    n, t, c, h, w = data.shape
    if c % groups:
        raise SpecError(f"channels ({c}) not divisible by groups ({groups})")
    eta = c // groups
    moved = data.reshape(n, t, groups, eta, h, w).transpose(0, 2, 1, 3, 4, 5).copy()
    return moved.reshape(n, t, c, h, w)


def inverse_shuffle_array(data: np.ndarray, groups: int) -> np.ndarray:
    n, t, c, h, w = data.shape
    if c % groups:
        raise SpecError(f"channels ({c}) not divisible by groups ({groups})")
    eta = c // groups
    moved = data.reshape(n, groups, t, eta, h, w).transpose(0, 2, 1, 3, 4, 5).copy()
    return moved.reshape(n, t, c, h, w)


def shift_array(data: np.ndarray, n_fwd: int, n_bwd: int) -> np.ndarray:
    """Channels [0, n_fwd) take frame t-1, [n_fwd, n_fwd+n_bwd) take frame t+1; zero-filled ends."""
    c = data.shape[2]
    if n_fwd < 0 or n_bwd < 0 or n_fwd + n_bwd > c:
        raise SpecError(f"cannot shift {n_fwd}+{n_bwd} channels of {c}")
    split = n_fwd + n_bwd
    out = np.zeros_like(data)
    out[:, 1:, :n_fwd] = data[:, :-1, :n_fwd]
    out[:, :-1, n_fwd:split] = data[:, 1:, n_fwd:split]
    out[:, :, split:] = data[:, :, split:]
    return out


def shift_backward_array(grad: np.ndarray, n_fwd: int, n_bwd: int) -> np.ndarray:
    """Transpose of ``shift_array``: each band moves the opposite way."""
    c = grad.shape[2]
    if n_fwd < 0 or n_bwd < 0 or n_fwd + n_bwd > c:
        raise SpecError(f"cannot shift {n_fwd}+{n_bwd} channels of {c}")
    split = n_fwd + n_bwd
    out = np.zeros_like(grad)
    out[:, :-1, :n_fwd] = grad[:, 1:, :n_fwd]
    out[:, 1:, n_fwd:split] = grad[:, :-1, n_fwd:split]
    out[:, :, split:] = grad[:, :, split:]
    return out


def _check(x: VideoTensor, spec: ShuffleSpec) -> None:
    if x.t != spec.t_frames:
        raise SpecError(f"tensor has T={x.t} but spec expects T={spec.t_frames}")
    if x.c != spec.channels:
        raise SpecError(f"tensor has C={x.c} but spec expects C={spec.channels}")
    if x.c % spec.num_groups:
        raise SpecError(f"channels ({x.c}) not divisible by groups ({spec.num_groups})")


def video_shuffle(x: VideoTensor, spec: ShuffleSpec) -> VideoTensor:
    _check(x, spec)
    return VideoTensor(shuffle_array(x.data, spec.num_groups))


def inverse_video_shuffle(x: VideoTensor, spec: ShuffleSpec) -> VideoTensor:
    _check(x, spec)
    return VideoTensor(inverse_shuffle_array(x.data, spec.num_groups))


def shuffle_backward(grad_out: VideoTensor, spec: ShuffleSpec) -> VideoTensor:
    # the Jacobian of a permutation is its inverse permutation
    return inverse_video_shuffle(grad_out, spec)


def temporal_shift(x: VideoTensor, spec: ShiftSpec) -> VideoTensor:
    n_fwd, n_bwd = spec.counts(x.c)
    return VideoTensor(shift_array(x.data, n_fwd, n_bwd))


def temporal_shift_backward(grad_out: VideoTensor, spec: ShiftSpec) -> VideoTensor:
    n_fwd, n_bwd = spec.counts(grad_out.c)
    return VideoTensor(shift_backward_array(grad_out.data, n_fwd, n_bwd))
