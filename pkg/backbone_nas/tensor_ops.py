"""
Forward and backward passes of the primitives the choice blocks and task
heads are made of.

Every ``*_forward`` function returns ``(output, cache)`` and the matching
``*_backward(dout, cache)`` returns the gradients with respect to each
array input, in argument order. Loss functions return ``(loss, grad)``
directly. All functions compute in the dtype of their inputs, so the
networks run in float32 while gradient checks can run in float64.
Summation order is fixed by the loop nests, which keeps results
bit-reproducible for a given input.
"""

import numpy as np
from scipy import special

from .utils import ShapeError, NumericalError

__all__ = ['conv2d_forward', 'conv2d_backward',
           'batch_norm_forward', 'batch_norm_backward',
           'relu_forward', 'relu_backward',
           'sigmoid_forward', 'sigmoid_backward',
           'channel_split_forward', 'channel_split_backward',
           'concat_forward', 'concat_backward',
           'channel_shuffle_forward', 'channel_shuffle_backward',
           'max_pool_forward', 'max_pool_backward',
           'global_avg_pool_forward', 'global_avg_pool_backward',
           'fully_connected_forward', 'fully_connected_backward',
           'softmax_cross_entropy', 'smooth_l1']


def _check_finite(array, op):
    if not np.all(np.isfinite(array)):
        raise NumericalError("Non-finite values encountered in {0}".format(op))


def _check_ndim(array, ndim, op):
    if array.ndim not in np.atleast_1d(ndim):
        raise ShapeError("{0} expects a {1}-dimensional input, got shape {2}"
                         .format(op, ndim, array.shape))


def _window(offset, stride, size):
    return slice(offset, offset + stride * (size - 1) + 1, stride)


def _output_size(size, kernel_size, stride):
    pad = kernel_size // 2
    return (size + 2 * pad - kernel_size) // stride + 1


def conv2d_forward(x, weight, stride=1, groups=1):
    """
    Same-padded 2D convolution without bias.

    Parameters
    ----------
    x : `~numpy.ndarray`
        Input of shape (batch, channels, height, width).
    weight : `~numpy.ndarray`
        Kernel of shape (out_channels, channels // groups, k_h, k_w).
    stride : {1, 2}
    groups : int
        1 for a dense convolution, or ``channels`` for a depthwise one.
    """
    _check_ndim(x, 4, 'conv2d')
    if weight.ndim != 4:
        raise ShapeError("conv2d weight must be 4-dimensional, got shape {0}"
                         .format(weight.shape))
    if stride not in (1, 2):
        raise ValueError("conv2d stride must be 1 or 2, got {0}".format(stride))

    n, c, h, w = x.shape
    c_out, c_group, kh, kw = weight.shape
    if groups == 1:
        if c_group != c:
            raise ShapeError("conv2d input shape {0} is incompatible with weight "
                             "shape {1}".format(x.shape, weight.shape))
    elif groups == c:
        if c_group != 1 or c_out != c:
            raise ShapeError("depthwise conv2d input shape {0} is incompatible "
                             "with weight shape {1}".format(x.shape, weight.shape))
    else:
        raise ValueError("conv2d supports groups=1 or groups=channels, got {0}"
                         .format(groups))

    pad_h, pad_w = kh // 2, kw // 2
    out_h = _output_size(h, kh, stride)
    out_w = _output_size(w, kw, stride)
    if pad_h or pad_w:
        xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    else:
        xp = x

    if groups == 1:
        # accumulate channels-last so every kernel tap is a single tensordot
        out = np.zeros((n, out_h, out_w, c_out), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, _window(i, stride, out_h), _window(j, stride, out_w)]
                out += np.tensordot(patch, weight[:, :, i, j], axes=([1], [1]))
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    else:
        out = np.zeros((n, c, out_h, out_w), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, _window(i, stride, out_h), _window(j, stride, out_w)]
                out += patch * weight[:, 0, i, j][None, :, None, None]

    _check_finite(out, 'conv2d')
    return out, (xp, weight, stride, groups, x.shape)


def conv2d_backward(dout, cache):
    """
    Returns
    -------
    dx, dweight
    """
    xp, weight, stride, groups, x_shape = cache
    n, c, h, w = x_shape
    _, _, kh, kw = weight.shape
    out_h, out_w = dout.shape[2:]
    pad_h, pad_w = kh // 2, kw // 2

    dxp = np.zeros_like(xp)
    dweight = np.zeros_like(weight)

    if groups == 1:
        dout_last = dout.transpose(0, 2, 3, 1)
        for i in range(kh):
            for j in range(kw):
                view = (slice(None), slice(None),
                        _window(i, stride, out_h), _window(j, stride, out_w))
                dweight[:, :, i, j] = np.tensordot(dout_last, xp[view],
                                                   axes=([0, 1, 2], [0, 2, 3]))
                dxp[view] += np.tensordot(dout_last, weight[:, :, i, j],
                                          axes=([3], [0])).transpose(0, 3, 1, 2)
    else:
        for i in range(kh):
            for j in range(kw):
                view = (slice(None), slice(None),
                        _window(i, stride, out_h), _window(j, stride, out_w))
                dweight[:, 0, i, j] = (dout * xp[view]).sum(axis=(0, 2, 3))
                dxp[view] += dout * weight[:, 0, i, j][None, :, None, None]

    dx = np.ascontiguousarray(dxp[:, :, pad_h:pad_h + h, pad_w:pad_w + w])
    return dx, dweight


def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeError("batch_norm expects a 2- or 4-dimensional input, got shape "
                     "{0}".format(x.shape))


def batch_norm_forward(x, scale, shift, running_mean=None, running_var=None,
                       training=True, epsilon=1e-5):
    """
    Batch normalization over the batch (and spatial) axes.

    In training mode the current batch statistics normalize the input and
    are returned in the cache (``cache[-2:]`` is ``(mean, var)``, with the
    biased variance); running statistics are neither used nor modified.
    In evaluation mode ``running_mean`` and ``running_var`` normalize.
    """
    axes, bshape = _bn_axes(x)
    if scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeError("batch_norm input shape {0} is incompatible with "
                         "parameter shape {1}".format(x.shape, scale.shape))

    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        if running_mean is None or running_var is None:
            raise ValueError("Evaluation-mode batch_norm needs running statistics")
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    inv_std = 1. / np.sqrt(var + epsilon)
    x_hat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = x_hat * scale.reshape(bshape) + shift.reshape(bshape)

    _check_finite(out, 'batch_norm')
    return out, (x_hat, scale, inv_std, training, mean, var)


def batch_norm_backward(dout, cache):
    """
    Returns
    -------
    dx, dscale, dshift
    """
    x_hat, scale, inv_std, training, _, _ = cache
    axes, bshape = _bn_axes(dout)

    dscale = (dout * x_hat).sum(axis=axes)
    dshift = dout.sum(axis=axes)
    dx_hat = dout * scale.reshape(bshape)

    if training:
        m = dout.size // dout.shape[1]
        dx = (inv_std.reshape(bshape) / m) * (
            m * dx_hat
            - dx_hat.sum(axis=axes).reshape(bshape)
            - x_hat * (dx_hat * x_hat).sum(axis=axes).reshape(bshape))
    else:
        dx = dx_hat * inv_std.reshape(bshape)

    return dx, dscale, dshift


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, np.zeros((), dtype=x.dtype)), mask


def relu_backward(dout, mask):
    return np.where(mask, dout, np.zeros((), dtype=dout.dtype))


def sigmoid_forward(x):
    out = special.expit(x)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1 - out)


def channel_split_forward(x):
    """
    Split the channels into two equal halves.
    """
    c = x.shape[1]
    if c % 2 != 0:
        raise ShapeError("channel_split needs an even channel count, got shape "
                         "{0}".format(x.shape))
    return (x[:, :c // 2], x[:, c // 2:]), c // 2


def channel_split_backward(dout_first, dout_second, cache=None):
    return np.concatenate([dout_first, dout_second], axis=1)


def concat_forward(a, b):
    """
    Concatenate along the channel axis.
    """
    if a.ndim != b.ndim or a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError("concat shapes {0} and {1} differ outside the channel "
                         "axis".format(a.shape, b.shape))
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(dout, split_at):
    return dout[:, :split_at], dout[:, split_at:]


def channel_shuffle_forward(x, groups=2):
    """
    Interleave the channels of ``groups`` equal groups.
    """
    n, c = x.shape[:2]
    if c % groups != 0:
        raise ShapeError("channel_shuffle with {0} groups needs a channel count "
                         "divisible by {0}, got shape {1}".format(groups, x.shape))
    rest = x.shape[2:]
    out = x.reshape((n, groups, c // groups) + rest).swapaxes(1, 2).reshape(x.shape)
    return out, groups


def channel_shuffle_backward(dout, groups=2):
    n, c = dout.shape[:2]
    rest = dout.shape[2:]
    return dout.reshape((n, c // groups, groups) + rest).swapaxes(1, 2).reshape(dout.shape)


def max_pool_forward(x, kernel_size=3, stride=2):
    """
    Same-padded max pooling; the first maximum of a window wins ties.
    """
    _check_ndim(x, 4, 'max_pool')
    n, c, h, w = x.shape
    pad = kernel_size // 2
    out_h = _output_size(h, kernel_size, stride)
    out_w = _output_size(w, kernel_size, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                constant_values=-np.inf)

    out = np.full((n, c, out_h, out_w), -np.inf, dtype=x.dtype)
    argmax = np.zeros((n, c, out_h, out_w), dtype=np.int32)
    for i in range(kernel_size):
        for j in range(kernel_size):
            patch = xp[:, :, _window(i, stride, out_h), _window(j, stride, out_w)]
            better = patch > out
            out = np.where(better, patch, out)
            argmax[better] = i * kernel_size + j

    return out, (argmax, kernel_size, stride, xp.shape, x.shape)


def max_pool_backward(dout, cache):
    argmax, kernel_size, stride, padded_shape, x_shape = cache
    h, w = x_shape[2:]
    out_h, out_w = dout.shape[2:]
    pad = kernel_size // 2
    dxp = np.zeros(padded_shape, dtype=dout.dtype)
    zero = np.zeros((), dtype=dout.dtype)
    for i in range(kernel_size):
        for j in range(kernel_size):
            view = (slice(None), slice(None),
                    _window(i, stride, out_h), _window(j, stride, out_w))
            dxp[view] += np.where(argmax == i * kernel_size + j, dout, zero)
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w])


def global_avg_pool_forward(x):
    _check_ndim(x, 4, 'global_avg_pool')
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, x_shape):
    h, w = x_shape[2:]
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).copy()


def fully_connected_forward(x, weight, bias):
    """
    ``x @ weight.T + bias`` for ``x`` of shape (batch, features) and
    ``weight`` of shape (outputs, features).
    """
    _check_ndim(x, 2, 'fully_connected')
    if weight.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != weight.shape[:1]:
        raise ShapeError("fully_connected input shape {0} is incompatible with "
                         "weight shape {1}".format(x.shape, weight.shape))
    out = x @ weight.T + bias
    _check_finite(out, 'fully_connected')
    return out, (x, weight)


def fully_connected_backward(dout, cache):
    """
    Returns
    -------
    dx, dweight, dbias
    """
    x, weight = cache
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """
    Mean softmax cross-entropy over the batch.

    Returns
    -------
    loss : float
    dlogits : `~numpy.ndarray`
    """
    _check_ndim(logits, 2, 'softmax_cross_entropy')
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:1]:
        raise ShapeError("softmax_cross_entropy logits shape {0} does not match "
                         "label shape {1}".format(logits.shape, labels.shape))
    n = logits.shape[0]
    log_probs = special.log_softmax(logits, axis=1)
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1
    grad /= n
    _check_finite(loss, 'softmax_cross_entropy')
    return float(loss), grad.astype(logits.dtype, copy=False)


def smooth_l1(prediction, target, beta=1.0):
    """
    Smooth-L1 (Huber) loss summed over coordinates and averaged over the
    batch: ``0.5 r**2 / beta`` below ``beta`` and ``|r| - 0.5 beta`` above.

    Returns
    -------
    loss : float
    dprediction : `~numpy.ndarray`
    """
    target = np.asarray(target, dtype=prediction.dtype)
    if prediction.shape != target.shape:
        raise ShapeError("smooth_l1 prediction shape {0} does not match target "
                         "shape {1}".format(prediction.shape, target.shape))
    n = prediction.shape[0]
    residual = prediction - target
    magnitude = np.abs(residual)
    quadratic = magnitude < beta
    loss = np.where(quadratic, 0.5 * residual ** 2 / beta, magnitude - 0.5 * beta).sum() / n
    grad = np.where(quadratic, residual / beta, np.sign(residual)) / n
    _check_finite(loss, 'smooth_l1')
    return float(loss), grad.astype(prediction.dtype, copy=False)
