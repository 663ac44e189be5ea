"""Per-frame 2D layers on (N, T, C, H, W) arrays with analytic backward passes.

Each 2D op folds N and T into one batch axis of N*T frames, so frames are
processed independently; only global average pooling mixes the time axis.
"""
from typing import Optional, Tuple

import numpy as np

from core.errors import ShapeError
from core.models import BatchNormParams, Conv2dParams, LinearParams, conv_output_size


def _fold(x: np.ndarray) -> np.ndarray:
    n, t, c, h, w = x.shape
    return x.reshape(n * t, c, h, w)


# --- convolution -------------------------------------------------------------

def im2col(x4: np.ndarray, k_h: int, k_w: int, stride: int, padding: int) -> Tuple[np.ndarray, int, int]:
    """(B, C, H, W) -> columns (B, C*k_h*k_w, out_h*out_w)."""
    b, c, h, w = x4.shape
    out_h = conv_output_size(h, k_h, stride, padding)
    out_w = conv_output_size(w, k_w, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"{k_h}x{k_w} kernel larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if k_h == 1 and k_w == 1 and padding == 0:
        picked = x4[:, :, ::stride, ::stride] if stride > 1 else x4
        return np.ascontiguousarray(picked).reshape(b, c, out_h * out_w), out_h, out_w
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x4
    cols = np.empty((b, c, k_h, k_w, out_h, out_w), dtype=x4.dtype)
    for i in range(k_h):
        for j in range(k_w):
            cols[:, :, i, j] = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    return cols.reshape(b, c * k_h * k_w, out_h * out_w), out_h, out_w


def col2im(cols: np.ndarray, x_shape: Tuple[int, int, int, int], k_h: int, k_w: int,
           stride: int, padding: int, out_h: int, out_w: int) -> np.ndarray:
    b, c, h, w = x_shape
    if k_h == 1 and k_w == 1 and padding == 0:
        grid = cols.reshape(b, c, out_h, out_w)
        if stride == 1:
            return grid
        dx = np.zeros(x_shape, dtype=cols.dtype)
        dx[:, :, ::stride, ::stride] = grid
        return dx
    cols = cols.reshape(b, c, k_h, k_w, out_h, out_w)
    dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k_h):
        for j in range(k_w):
            dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += cols[:, :, i, j]
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + w]
    return dxp


def conv2d_forward_cols(x: np.ndarray, p: Conv2dParams) -> Tuple[np.ndarray, np.ndarray]:
    n, t, c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {c}")
    k_h, k_w = p.kernel
    cols, out_h, out_w = im2col(_fold(x), k_h, k_w, p.stride, p.padding)
    out = np.matmul(p.weight.reshape(p.out_channels, -1), cols)
    if p.bias is not None:
        out += p.bias.reshape(1, -1, 1)
    return out.reshape(n, t, p.out_channels, out_h, out_w), cols


def conv2d_backward_cols(cols: np.ndarray, x_shape: Tuple[int, ...], p: Conv2dParams,
                         grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    n, t, c, h, w = x_shape
    out_h, out_w = grad_out.shape[3], grad_out.shape[4]
    k_h, k_w = p.kernel
    g = grad_out.reshape(n * t, p.out_channels, out_h * out_w)
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(p.weight.shape)
    grad_b = g.sum(axis=(0, 2)) if p.bias is not None else None
    grad_cols = np.matmul(p.weight.reshape(p.out_channels, -1).T, g)
    grad_x = col2im(grad_cols, (n * t, c, h, w), k_h, k_w, p.stride, p.padding, out_h, out_w)
    return grad_x.reshape(x_shape), grad_w, grad_b


def conv2d_forward(x: np.ndarray, p: Conv2dParams) -> np.ndarray:
    return conv2d_forward_cols(x, p)[0]


def conv2d_backward(x: np.ndarray, p: Conv2dParams,
                    grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Returns (grad_x, grad_w, grad_b); grad_b is None for bias-free convs."""
    _, cols = conv2d_forward_cols(x, p)
    return conv2d_backward_cols(cols, x.shape, p, grad_out)


# --- batch normalization -----------------------------------------------------

_BN_AXES = (0, 1, 3, 4)


def _bcast(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, 1, -1, 1, 1)


def batchnorm_forward(x: np.ndarray, p: BatchNormParams, training: bool,
                      update_stats: bool = True) -> Tuple[np.ndarray, tuple]:
    """Batch statistics when training and not frozen, running statistics otherwise."""
    if x.shape[2] != p.channels:
        raise ShapeError(f"batchnorm expects {p.channels} channels, got {x.shape[2]}")
    use_batch = training and not p.frozen
    if use_batch:
        mean = x.mean(axis=_BN_AXES)
        var = x.var(axis=_BN_AXES)
        count = x.size // p.channels
        if update_stats:
            unbiased = var * count / max(count - 1, 1)
            p.running_mean *= 1.0 - p.momentum
            p.running_mean += p.momentum * mean.astype(p.running_mean.dtype)
            p.running_var *= 1.0 - p.momentum
            p.running_var += p.momentum * unbiased.astype(p.running_var.dtype)
    else:
        mean, var = p.running_mean, p.running_var
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x - _bcast(mean)) * _bcast(inv_std)
    out = x_hat * _bcast(p.gamma) + _bcast(p.beta)
    return out.astype(x.dtype, copy=False), (x_hat, inv_std, use_batch)


def batchnorm_backward(grad: np.ndarray, p: BatchNormParams,
                       cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_hat, inv_std, use_batch = cache
    grad_gamma = (grad * x_hat).sum(axis=_BN_AXES)
    grad_beta = grad.sum(axis=_BN_AXES)
    g_hat = grad * _bcast(p.gamma)
    if not use_batch:
        return g_hat * _bcast(inv_std), grad_gamma, grad_beta
    count = grad.size // p.channels
    sum_g = g_hat.sum(axis=_BN_AXES)
    sum_gx = (g_hat * x_hat).sum(axis=_BN_AXES)
    grad_x = (_bcast(inv_std) / count) * (count * g_hat - _bcast(sum_g) - x_hat * _bcast(sum_gx))
    return grad_x, grad_gamma, grad_beta


# --- activations and pooling -------------------------------------------------

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Mask taken from the forward output: zero where the input was <= 0."""
    return grad * (out > 0)


def maxpool_forward(x: np.ndarray, kernel: int = 3, stride: int = 2,
                    padding: int = 1) -> Tuple[np.ndarray, tuple]:
    n, t, c, h, w = x.shape
    out_h = conv_output_size(h, kernel, stride, padding)
    out_w = conv_output_size(w, kernel, stride, padding)
    if out_h < 1 or out_w < 1 or kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise ShapeError(f"{kernel}x{kernel} pooling window exceeds input {h}x{w} (padding {padding})")
    x4 = _fold(x)
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    windows = np.empty((n * t, c, kernel * kernel, out_h, out_w), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            windows[:, :, i * kernel + j] = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    return out.reshape(n, t, c, out_h, out_w), (x.shape, arg, kernel, stride, padding)


def maxpool_backward(grad: np.ndarray, cache: tuple) -> np.ndarray:
    x_shape, arg, kernel, stride, padding = cache
    n, t, c, h, w = x_shape
    out_h, out_w = arg.shape[2], arg.shape[3]
    g = grad.reshape(n * t, c, out_h, out_w)
    dxp = np.zeros((n * t, c, h + 2 * padding, w + 2 * padding), dtype=grad.dtype)
    for i in range(kernel):
        for j in range(kernel):
            routed = np.where(arg == i * kernel + j, g, 0)
            dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += routed
    return dxp[:, :, padding:padding + h, padding:padding + w].reshape(x_shape)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over T, H and W jointly: one C-vector per clip."""
    return x.mean(axis=(1, 3, 4))


def global_avg_pool_backward(grad: np.ndarray, x_shape: Tuple[int, ...]) -> np.ndarray:
    n, t, c, h, w = x_shape
    scaled = grad / (t * h * w)
    return np.broadcast_to(scaled[:, None, :, None, None], x_shape).copy()


# --- classifier head ---------------------------------------------------------

def linear_head_forward(x: np.ndarray, p: LinearParams, dropout: float, training: bool,
                        rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, tuple]:
    """Inverted dropout (drop probability ``dropout``) followed by x @ W^T + b."""
    if x.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"head expects {p.weight.shape[1]} features, got {x.shape[1]}")
    mask = None
    if training and dropout > 0:
        if rng is None:
            raise ValueError("dropout in training mode needs a random generator")
        keep = rng.random(x.shape) >= dropout
        mask = keep.astype(x.dtype) / (1.0 - dropout)
        x = x * mask
    out = x @ p.weight.T + p.bias
    return out, (x, mask)


def linear_head_backward(grad: np.ndarray, p: LinearParams,
                         cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_dropped, mask = cache
    grad_w = grad.T @ x_dropped
    grad_b = grad.sum(axis=0)
    grad_x = grad @ p.weight
    if mask is not None:
        grad_x = grad_x * mask
    return grad_x, grad_w, grad_b
