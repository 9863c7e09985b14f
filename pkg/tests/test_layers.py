import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import numeric_grad, rel_err
from nets import analytic_input_grad, param_fd, scalar_loss
from rtrecon.enhancer.layers import (AvgPool2, BatchNorm2d, ConvBlock, Conv2d, MaxPool2,
                                     NormActDrop, PReLU, Residual, Upsample2, conv2d,
                                     conv2d_backward)
from rtrecon.errors import ValidationError

TOL = 1e-4


def _drop_streams(seed=0):
    i = 0
    while True:
        yield np.random.Generator(np.random.PCG64([seed, 99, i]))
        i += 1


def check_layer(layer, x, rng, params=True):
    w = rng.standard_normal(layer.forward(x).shape)
    num = numeric_grad(scalar_loss(layer, w), x)
    assert rel_err(analytic_input_grad(layer, x, w), num) < TOL
    if params:
        # parameters with an identically zero gradient are judged on the layer's scale
        floor = 1e-3 * max(np.abs(num).max(), 1e-3)
        for name in dict(layer.named_parameters()):
            an, nu = param_fd(layer, x, w, name)
            assert rel_err(an, nu, floor) < TOL, name


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 7, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1
    np.testing.assert_array_equal(conv2d(x, w, np.zeros(3)), x)


def test_conv_averaging_kernel_borders():
    x = np.ones((1, 1, 5, 6))
    y = conv2d(x, np.full((1, 1, 3, 3), 1 / 9))[0, 0]
    np.testing.assert_allclose(y[1:-1, 1:-1], 1.0)
    np.testing.assert_allclose([y[0, 0], y[0, 2], y[2, 0]], [4 / 9, 6 / 9, 6 / 9])


def test_conv_gradient_1x4x6(rng):
    x = rng.standard_normal((1, 1, 4, 6))
    w = rng.standard_normal((2, 1, 3, 3))
    b = rng.standard_normal(2)
    dy = rng.standard_normal((1, 2, 4, 6))
    dx, dw, db = conv2d_backward(dy, x, w)
    assert rel_err(dx, numeric_grad(lambda v: np.sum(dy * conv2d(v, w, b)), x)) < TOL
    assert rel_err(dw, numeric_grad(lambda v: np.sum(dy * conv2d(x, v, b)), w)) < TOL
    assert rel_err(db, numeric_grad(lambda v: np.sum(dy * conv2d(x, w, v)), b)) < TOL


def test_conv_shape_mismatch(rng):
    with pytest.raises(ValidationError):
        conv2d(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 3, 3, 3)))


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(1, 3))
def test_conv_layer_fd(seed, ci, co):
    rng = np.random.default_rng(seed)
    check_layer(Conv2d(ci, co, 3, rng), rng.standard_normal((2, ci, 4, 6)), rng)


def test_batchnorm_constant_input_is_zero():
    bn = BatchNorm2d(2)
    y = bn.forward(np.full((3, 2, 4, 4), 5.0))
    assert np.abs(y).max() < 1e-3


def test_batchnorm_rejects_single_sample_in_train_mode():
    with pytest.raises(ValidationError):
        BatchNorm2d(1).forward(np.zeros((1, 1, 4, 4)))
    bn = BatchNorm2d(1)
    bn.set_training(False)
    assert bn.forward(np.zeros((1, 1, 4, 4))).shape == (1, 1, 4, 4)


def test_batchnorm_running_statistics(rng):
    bn = BatchNorm2d(2)
    x = rng.standard_normal((4, 2, 3, 3)) * 2 + 1
    bn.forward(x)
    m = x.mean(axis=(0, 2, 3))
    v = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * m)
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * v)


def test_prelu_values():
    act = PReLU(1)
    y = act.forward(np.array([-2.0, 0.0, 3.0]).reshape(1, 1, 1, 3))
    np.testing.assert_allclose(y.ravel(), [-0.5, 0.0, 3.0])


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_norm_act_drop_fd(seed, train_mode):
    rng = np.random.default_rng(seed)
    layer = NormActDrop(3, 0.2, np.random.default_rng(1))
    # move the slopes off their init so the rectifier term is exercised
    layer.act.params["slope"][:] = rng.uniform(0.1, 0.5, 3)
    layer.bn.params["gamma"][:] = rng.uniform(0.5, 2.0, 3)
    layer.bn.params["beta"][:] = rng.standard_normal(3)
    layer.set_training(train_mode)
    check_layer(layer, rng.standard_normal((3, 3, 4, 4)), rng)


def test_dropout_inverted_scaling():
    layer = NormActDrop(1, 0.5, np.random.default_rng(0))
    d = layer.drop
    y = d.forward(np.ones((4, 1, 32, 32)))
    assert set(np.unique(y)) <= {0.0, 2.0}
    d.set_training(False)
    assert np.array_equal(d.forward(np.ones((1, 1, 4, 4))), np.ones((1, 1, 4, 4)))


@given(st.integers(0, 2 ** 32 - 1))
def test_pool_and_upsample_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 4, 6))
    for layer in (MaxPool2(), AvgPool2(), Upsample2()):
        check_layer(layer, x, rng, params=False)


def test_maxpool_tie_goes_to_first():
    p = MaxPool2()
    p.forward(np.ones((1, 1, 2, 2)))
    g = p.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])
    with pytest.raises(ValidationError):
        p.forward(np.ones((1, 1, 3, 2)))


@settings(max_examples=6)
@given(st.integers(0, 2 ** 32 - 1))
def test_conv_block_and_residual_fd(seed):
    rng = np.random.default_rng(seed)
    block = ConvBlock(2, 3, 0.1, rng, _drop_streams(seed))
    check_layer(block, rng.standard_normal((2, 2, 4, 4)), rng)
    res = Residual(ConvBlock(2, 2, 0.1, rng, _drop_streams(seed + 1)))
    check_layer(res, rng.standard_normal((2, 2, 4, 4)), rng)
