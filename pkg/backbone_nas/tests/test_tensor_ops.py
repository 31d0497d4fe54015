import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from .. import tensor_ops as ops
from ..utils import ShapeError, NumericalError
from .helpers import numerical_gradient, assert_gradient_close, projected_loss

SEEDS = range(20)


def check_gradients(forward, backward, inputs, rng):
    """
    Compare the analytic gradients of ``backward`` with central differences
    of a random projection of ``forward``'s output, for every input.
    """
    out, cache = forward(*inputs)
    projection = rng.normal(size=out.shape)
    grads = backward(projection, cache)
    if not isinstance(grads, tuple):
        grads = (grads,)
    assert len(grads) == len(inputs)
    for x, grad in zip(inputs, grads):
        assert grad.shape == x.shape
        numeric = numerical_gradient(lambda: projected_loss(forward(*inputs)[0],
                                                            projection), x)
        assert_gradient_close(grad, numeric)


@pytest.mark.parametrize('seed', SEEDS)
def test_conv2d_gradients(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5, 7]))
    stride = int(rng.integers(1, 3))
    h, w = rng.integers(3, 7, size=2)
    x = rng.normal(size=(2, c_in, h, w))
    weight = rng.normal(size=(c_out, c_in, k, k))
    check_gradients(lambda x, weight: ops.conv2d_forward(x, weight, stride=stride),
                    ops.conv2d_backward, (x, weight), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_depthwise_conv2d_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    c = int(rng.integers(1, 5))
    k = int(rng.choice([3, 5, 7]))
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(2, c, 6, 5))
    weight = rng.normal(size=(c, 1, k, k))
    check_gradients(lambda x, weight: ops.conv2d_forward(x, weight, stride=stride,
                                                         groups=c),
                    ops.conv2d_backward, (x, weight), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_batch_norm_training_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    c = int(rng.integers(1, 4))
    shape = (3, c, 4, 3) if seed % 2 == 0 else (5, c)
    x = rng.normal(size=shape) * rng.uniform(0.5, 3) + rng.normal()
    scale = rng.normal(size=c)
    shift = rng.normal(size=c)
    check_gradients(lambda x, scale, shift: ops.batch_norm_forward(x, scale, shift),
                    ops.batch_norm_backward, (x, scale, shift), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_batch_norm_eval_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    c = int(rng.integers(1, 4))
    x = rng.normal(size=(2, c, 3, 3))
    scale, shift = rng.normal(size=c), rng.normal(size=c)
    mean, var = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
    check_gradients(lambda x, scale, shift: ops.batch_norm_forward(
                        x, scale, shift, mean, var, training=False),
                    ops.batch_norm_backward, (x, scale, shift), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_relu_and_sigmoid_gradients(seed):
    rng = np.random.default_rng(400 + seed)
    x = rng.normal(size=tuple(rng.integers(1, 5, size=3)))
    check_gradients(ops.relu_forward, ops.relu_backward, (x,), rng)
    check_gradients(ops.sigmoid_forward, ops.sigmoid_backward, (x,), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_split_concat_shuffle_gradients(seed):
    rng = np.random.default_rng(500 + seed)
    c = 2 * int(rng.integers(1, 5))
    x = rng.normal(size=(2, c, 3, 2))

    def forward(x):
        (a, b), _ = ops.channel_split_forward(x)
        out, split_at = ops.concat_forward(b * 2., a)
        out, groups = ops.channel_shuffle_forward(out)
        return out, (split_at, groups)

    def backward(dout, cache):
        split_at, groups = cache
        db, da = ops.concat_backward(ops.channel_shuffle_backward(dout, groups), split_at)
        return ops.channel_split_backward(da, db * 2.)

    check_gradients(forward, backward, (x,), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_max_pool_gradients(seed):
    rng = np.random.default_rng(600 + seed)
    h, w = rng.integers(2, 8, size=2)
    x = rng.normal(size=(2, 2, h, w))
    check_gradients(ops.max_pool_forward, ops.max_pool_backward, (x,), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_global_avg_pool_and_fully_connected_gradients(seed):
    rng = np.random.default_rng(700 + seed)
    c, outputs = rng.integers(1, 6, size=2)
    x = rng.normal(size=(3, c, 3, 4))
    check_gradients(ops.global_avg_pool_forward, ops.global_avg_pool_backward, (x,), rng)
    features = rng.normal(size=(3, c))
    weight, bias = rng.normal(size=(outputs, c)), rng.normal(size=outputs)
    check_gradients(ops.fully_connected_forward, ops.fully_connected_backward,
                    (features, weight, bias), rng)


@pytest.mark.parametrize('seed', SEEDS)
def test_loss_gradients(seed):
    rng = np.random.default_rng(800 + seed)
    n, k = rng.integers(1, 6), rng.integers(2, 6)
    logits = rng.normal(size=(n, k)) * 3
    labels = rng.integers(0, k, size=n)
    _, grad = ops.softmax_cross_entropy(logits, labels)
    numeric = numerical_gradient(lambda: ops.softmax_cross_entropy(logits, labels)[0],
                                 logits)
    assert_gradient_close(grad, numeric)

    prediction = rng.uniform(0, 1, size=(n, 4))
    target = rng.uniform(-1, 2, size=(n, 4))
    _, grad = ops.smooth_l1(prediction, target)
    numeric = numerical_gradient(lambda: ops.smooth_l1(prediction, target)[0], prediction)
    assert_gradient_close(grad, numeric)


def test_conv2d_values():
    x = np.ones((1, 1, 3, 3))
    out, _ = ops.conv2d_forward(x, np.ones((1, 1, 3, 3)))
    assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    # 1x1 identity kernel
    x = np.arange(2 * 3 * 4 * 4, dtype=float).reshape(2, 3, 4, 4)
    out, _ = ops.conv2d_forward(x, np.eye(3).reshape(3, 3, 1, 1))
    assert_array_equal(out, x)


@pytest.mark.parametrize(('size', 'kernel_size', 'stride', 'expected'),
                         [(7, 3, 2, 4), (8, 3, 2, 4), (224, 3, 2, 112), (5, 7, 1, 5),
                          (1, 5, 2, 1)])
def test_conv2d_output_size(size, kernel_size, stride, expected):
    x = np.zeros((1, 2, size, size))
    out, _ = ops.conv2d_forward(x, np.zeros((3, 2, kernel_size, kernel_size)),
                                stride=stride)
    assert out.shape == (1, 3, expected, expected)


def test_depthwise_matches_per_channel_convolution(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    weight = rng.normal(size=(3, 1, 3, 3))
    out, _ = ops.conv2d_forward(x, weight, groups=3)
    for channel in range(3):
        single, _ = ops.conv2d_forward(x[:, channel:channel + 1],
                                       weight[channel:channel + 1])
        assert_allclose(out[:, channel], single[:, 0])


def test_batch_norm_training_output_moments(rng):
    x = rng.normal(loc=3, scale=2, size=(16, 3, 5, 5))
    scale, shift = np.array([0.5, 1., 2.]), np.array([-1., 0., 4.])
    out, _ = ops.batch_norm_forward(x, scale, shift, training=True)
    assert_allclose(out.mean(axis=(0, 2, 3)), shift, atol=1e-10)
    assert_allclose(out.var(axis=(0, 2, 3)), scale ** 2, rtol=1e-4)


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
        ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 5, 3, 3)))
    with pytest.raises(ShapeError, match='4-dimensional'):
        ops.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((3, 2, 3, 3)))
    with pytest.raises(ValueError, match='stride'):
        ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 2, 3, 3)), stride=3)


def test_non_finite_values_raise():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = np.nan
    with pytest.raises(NumericalError):
        ops.conv2d_forward(x, np.ones((1, 1, 3, 3)))
    with pytest.raises(NumericalError):
        ops.fully_connected_forward(np.array([[np.inf]]), np.ones((1, 1)), np.zeros(1))


def test_float32_is_preserved(rng):
    x = rng.normal(size=(2, 4, 6, 6)).astype(np.float32)
    out, cache = ops.conv2d_forward(x, rng.normal(size=(4, 1, 3, 3)).astype(np.float32),
                                    groups=4)
    assert out.dtype == np.float32
    out, cache = ops.batch_norm_forward(out, np.ones(4, np.float32), np.zeros(4, np.float32))
    assert out.dtype == np.float32
    dx, dscale, dshift = ops.batch_norm_backward(np.ones_like(out), cache)
    assert dx.dtype == np.float32
    loss, grad = ops.smooth_l1(np.zeros((2, 4), np.float32), np.ones((2, 4)))
    assert grad.dtype == np.float32
    assert isinstance(loss, float)


def test_batch_norm_uses_biased_variance():
    x = np.array([[1.], [3.]])
    out, cache = ops.batch_norm_forward(x, np.ones(1), np.zeros(1), epsilon=0.)
    assert_allclose(out[:, 0], [-1, 1])
    mean, var = cache[-2:]
    assert_allclose(mean, [2.])
    assert_allclose(var, [1.])


def test_batch_norm_eval_needs_statistics():
    with pytest.raises(ValueError, match='running statistics'):
        ops.batch_norm_forward(np.zeros((2, 1)), np.ones(1), np.zeros(1), training=False)


def test_channel_shuffle_order():
    x = np.arange(6, dtype=float).reshape(1, 6, 1, 1)
    out, groups = ops.channel_shuffle_forward(x)
    assert_array_equal(out.ravel(), [0, 3, 1, 4, 2, 5])
    assert_array_equal(ops.channel_shuffle_backward(out, groups), x)
    with pytest.raises(ShapeError):
        ops.channel_shuffle_forward(np.zeros((1, 3, 1, 1)))


def test_channel_split_and_concat():
    x = np.arange(4, dtype=float).reshape(1, 4, 1, 1)
    (a, b), half = ops.channel_split_forward(x)
    assert half == 2
    assert_array_equal(a.ravel(), [0, 1])
    assert_array_equal(b.ravel(), [2, 3])
    with pytest.raises(ShapeError, match='even'):
        ops.channel_split_forward(np.zeros((1, 3, 1, 1)))
    with pytest.raises(ShapeError):
        ops.concat_forward(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 3, 3)))


def test_max_pool_first_maximum_wins():
    x = np.ones((1, 1, 3, 3))
    out, cache = ops.max_pool_forward(x, kernel_size=3, stride=2)
    assert out.shape == (1, 1, 2, 2)
    dx = ops.max_pool_backward(np.ones_like(out), cache)
    # every window's first in-image element receives its gradient
    assert dx.sum() == 4
    assert dx[0, 0, 0, 0] == 1


def test_loss_values():
    loss, grad = ops.softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
    assert_allclose(loss, np.log(4))
    assert_allclose(grad.sum(axis=1), 0, atol=1e-12)

    loss, _ = ops.smooth_l1(np.array([[0.5, 2., 0., 0.]]), np.zeros((1, 4)))
    assert_allclose(loss, 0.125 + 1.5)

    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 1, 2]))
    with pytest.raises(ShapeError):
        ops.smooth_l1(np.zeros((2, 4)), np.zeros((2, 3)))
