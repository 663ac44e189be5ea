import numpy as np
import pytest

from core.config import ShiftSpec
from core.errors import ShapeError
from core.models import BatchNormParams, Conv2dParams, LinearParams
from modules.nn import layers as F
from modules.nn.blocks import (BatchNorm, Conv2d, GlobalAvgPool, LinearHead, MaxPool, ReLU, TemporalShift,
                               VideoShuffle)
from modules.training.gradcheck import check_layer


def _naive_conv(x, w, stride, pad):
    n, t, c, h, wd = x.shape
    out_c, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, t, out_c, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, :, i, j] = np.einsum('ntchw,ochw->nto', patch, w)
    return out


@pytest.mark.parametrize("kernel, stride, pad", [(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3), (1, 1, 0)])
def test_conv_matches_naive_loop(rng, kernel, stride, pad):
    x = rng.standard_normal((2, 3, 4, 9, 9))
    w = rng.standard_normal((5, 4, kernel, kernel))
    out = F.conv2d_forward(x, Conv2dParams(weight=w, stride=stride, padding=pad))
    np.testing.assert_allclose(out, _naive_conv(x, w, stride, pad), rtol=1e-10, atol=1e-10)


def test_identity_pointwise_conv_passes_input_through(rng):
    x = rng.standard_normal((1, 2, 3, 4, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(F.conv2d_forward(x, Conv2dParams(weight=w)), x)


def test_ones_kernel_counts_footprint():
    x = np.ones((1, 1, 1, 5, 5))
    out = F.conv2d_forward(x, Conv2dParams(weight=np.ones((1, 1, 3, 3)), stride=1, padding=1))[0, 0, 0]
    assert out[2, 2] == 9.0
    for corner in (out[0, 0], out[0, 4], out[4, 0], out[4, 4]):
        assert corner == 4.0
    assert out[0, 2] == 6.0


def test_conv_rejects_oversized_kernel_and_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        F.conv2d_forward(np.ones((1, 1, 1, 2, 2)), Conv2dParams(weight=np.ones((1, 1, 5, 5))))
    with pytest.raises(ShapeError):
        F.conv2d_forward(np.ones((1, 1, 2, 4, 4)), Conv2dParams(weight=np.ones((1, 3, 1, 1))))


def test_batchnorm_fixed_point_on_normalized_batch(rng):
    x = rng.standard_normal((4, 3, 2, 5, 5))
    x = (x - x.mean(axis=(0, 1, 3, 4), keepdims=True)) / x.std(axis=(0, 1, 3, 4), keepdims=True)
    out, _ = F.batchnorm_forward(x, BatchNormParams.identity(2, np.float64), training=True)
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_batchnorm_running_stats_use_momentum(rng):
    p = BatchNormParams.identity(3, np.float64)
    x = rng.normal(2.0, 3.0, (2, 2, 3, 4, 4))
    F.batchnorm_forward(x, p, training=True)
    count = x.size // 3
    mean = x.mean(axis=(0, 1, 3, 4))
    var = x.var(axis=(0, 1, 3, 4)) * count / (count - 1)
    np.testing.assert_allclose(p.running_mean, 0.1 * mean)
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * var)


def test_frozen_batchnorm_uses_running_stats(rng):
    p = BatchNormParams.identity(2, np.float64)
    p.running_mean[:] = [1.0, -1.0]
    p.frozen = True
    x = rng.standard_normal((1, 2, 2, 3, 3))
    out, _ = F.batchnorm_forward(x, p, training=True)
    np.testing.assert_allclose(out[:, :, 0], (x[:, :, 0] - 1.0) / np.sqrt(1.0 + p.eps))
    assert p.running_var.tolist() == [1.0, 1.0]


def test_relu_values():
    np.testing.assert_array_equal(F.relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_maxpool_shape_and_values(rng):
    x = rng.standard_normal((1, 2, 3, 8, 8))
    out, _ = F.maxpool_forward(x, 3, 2, 1)
    assert out.shape == (1, 2, 3, 4, 4)
    assert out[0, 0, 0, 1, 1] == x[0, 0, 0, 1:4, 1:4].max()
    assert out[0, 0, 0, 0, 0] == x[0, 0, 0, 0:2, 0:2].max()


def test_global_avg_pool_of_constant():
    out = F.global_avg_pool(np.full((2, 3, 4, 5, 5), 1.5))
    np.testing.assert_allclose(out, np.full((2, 4), 1.5))


def test_dropout_off_at_inference(rng):
    p = LinearParams(weight=rng.standard_normal((3, 4)), bias=np.zeros(3))
    x = rng.standard_normal((2, 4))
    out, _ = F.linear_head_forward(x, p, dropout=0.8, training=False)
    np.testing.assert_allclose(out, x @ p.weight.T)


def _conv(rng, in_c, out_c, k, stride, pad):
    return Conv2d.create("conv", in_c, out_c, k, stride, pad, rng, np.float64)


@pytest.mark.parametrize("make, shape", [
    (lambda rng: _conv(rng, 3, 4, 3, 1, 1), (2, 2, 3, 5, 5)),
    (lambda rng: _conv(rng, 3, 4, 3, 2, 1), (2, 2, 3, 6, 6)),
    (lambda rng: _conv(rng, 4, 2, 1, 2, 0), (1, 2, 4, 5, 5)),
    (lambda rng: _conv(rng, 1, 2, 7, 2, 3), (1, 2, 1, 9, 9)),
    (lambda rng: ReLU(), (2, 2, 3, 4, 4)),
    (lambda rng: MaxPool(), (2, 2, 3, 6, 6)),
    (lambda rng: GlobalAvgPool(), (2, 3, 4, 3, 3)),
    (lambda rng: VideoShuffle("shuffle", 4), (2, 4, 8, 2, 2)),
    (lambda rng: VideoShuffle("unshuffle", 4, inverse=True), (2, 4, 8, 2, 2)),
    (lambda rng: TemporalShift("shift", ShiftSpec(fraction_fwd=0.25, fraction_bwd=0.25)), (2, 4, 8, 2, 2)),
])
def test_layer_gradients_match_finite_differences(rng, make, shape):
    report = check_layer(make(rng), rng.standard_normal(shape), tolerance=1e-4, seed=11)
    assert report.passed, [(c.name, c.max_rel_error) for c in report.checks]


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(rng, training):
    p = BatchNormParams.identity(3, np.float64)
    p.gamma[:] = rng.uniform(0.5, 1.5, 3)
    p.beta[:] = rng.normal(0, 0.1, 3)
    p.running_var[:] = rng.uniform(0.5, 1.5, 3)
    bn = BatchNorm("bn", p)
    bn.update_stats = False
    report = check_layer(bn, rng.standard_normal((2, 2, 3, 3, 3)), tolerance=1e-4, training=training)
    assert report.passed, [(c.name, c.max_rel_error) for c in report.checks]


def test_linear_head_gradients(rng):
    p = LinearParams(weight=rng.standard_normal((3, 6)), bias=rng.standard_normal(3))
    report = check_layer(LinearHead("fc", p, dropout=0.0), rng.standard_normal((4, 6)), tolerance=1e-6)
    assert report.passed
