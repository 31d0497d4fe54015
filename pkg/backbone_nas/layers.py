"""
Stateful layers on top of `~backbone_nas.tensor_ops`.

Layers do not own their weights: every learnable array lives in a
`ParameterBundle` and layers hold a bundle plus a key, so two networks
built from the same bundle share storage. Batch-norm running statistics
are copied into the layer unless it is built with
``private_statistics=False``.

Every layer implements ``forward(x, mode)`` and ``backward(dout)``. The
mode is one of ``'train'`` (batch statistics, running averages updated),
``'eval'`` (running statistics) or ``'calibrate'`` (batch statistics,
inputs accumulated for `recompute_bn_statistics`, nothing updated).
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import tensor_ops as ops
from .utils import CalibrationWarning, array_checksum

__all__ = ['ParameterBundle', 'BatchNormState', 'Conv2d', 'BatchNorm2d', 'ReLU',
           'MaxPool2d', 'GlobalAvgPool', 'Linear', 'Sigmoid', 'Sequential',
           'ChoiceBlock', 'init_parameters', 'init_linear', 'build_sequential',
           'recompute_bn_statistics', 'MODES']

MODES = ('train', 'eval', 'calibrate')


class ParameterBundle:
    """
    Named learnable arrays (``params``) and non-learnable buffers of one
    supernet component, with the gradients and SGD velocities that go
    with the parameters.
    """

    def __init__(self, name):
        self.name = name
        self.params = {}
        self.buffers = {}
        self.grads = {}
        self.velocity = {}

    def add_parameter(self, key, array):
        self.params[key] = np.ascontiguousarray(array, dtype=np.float32)

    def add_buffer(self, key, array):
        self.buffers[key] = np.ascontiguousarray(array, dtype=np.float32)

    def accumulate_grad(self, key, grad):
        if key in self.grads:
            self.grads[key] += grad
        else:
            self.grads[key] = grad

    def zero_grad(self):
        self.grads = {}

    def named_tensors(self):
        """
        ``(qualified_name, array)`` pairs, parameters first, in insertion
        order.
        """
        for key, array in self.params.items():
            yield "{0}.{1}".format(self.name, key), array
        for key, array in self.buffers.items():
            yield "{0}.{1}".format(self.name, key), array

    def checksum(self):
        return array_checksum(*(array for _, array in self.named_tensors()))

    def __repr__(self):
        return "<ParameterBundle {0}: {1} params, {2} buffers>".format(
            self.name, len(self.params), len(self.buffers))


@dataclass
class BatchNormState:
    """
    Learnable scale/shift plus running statistics of one batch norm.
    """

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def private_copy(self):
        return replace(self, running_mean=self.running_mean.copy(),
                       running_var=self.running_var.copy())


class Conv2d:

    def __init__(self, bundle, name, stride=1, groups=1):
        self.bundle = bundle
        self.key = name + '.weight'
        self.stride = stride
        self.groups = groups
        self._cache = None

    @property
    def weight(self):
        return self.bundle.params[self.key]

    def forward(self, x, mode='train'):
        out, self._cache = ops.conv2d_forward(x, self.weight, stride=self.stride,
                                              groups=self.groups)
        return out

    def backward(self, dout):
        dx, dweight = ops.conv2d_backward(dout, self._cache)
        self.bundle.accumulate_grad(self.key, dweight)
        return dx

    def batch_norms(self):
        return []


class _MomentAccumulator:
    """
    Exact per-channel mean and biased variance over many batches, merged
    in float64 (Chan et al. pairwise update).
    """

    def __init__(self):
        self.count = 0
        self.mean = None
        self.m2 = None

    def update(self, x):
        axes = (0, 2, 3) if x.ndim == 4 else (0,)
        values = x.astype(np.float64)
        n = values.size // values.shape[1]
        batch_mean = values.mean(axis=axes)
        shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
        batch_m2 = ((values - batch_mean.reshape(shape)) ** 2).sum(axis=axes)

        if self.count == 0:
            self.count, self.mean, self.m2 = n, batch_mean, batch_m2
            return

        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + batch_m2 + delta ** 2 * (self.count * n / total)
        self.count = total

    @property
    def variance(self):
        return self.m2 / self.count


class BatchNorm2d:

    def __init__(self, bundle, name, private_statistics=True):
        self.bundle = bundle
        self.name = name
        state = BatchNormState(scale=bundle.params[name + '.scale'],
                               shift=bundle.params[name + '.shift'],
                               running_mean=bundle.buffers[name + '.running_mean'],
                               running_var=bundle.buffers[name + '.running_var'])
        self.state = state.private_copy() if private_statistics else state
        self._cache = None
        self._accumulator = None

    def forward(self, x, mode='train'):
        state = self.state
        out, self._cache = ops.batch_norm_forward(
            x, state.scale, state.shift, state.running_mean, state.running_var,
            training=(mode != 'eval'), epsilon=state.epsilon)

        if mode == 'train':
            mean, var = self._cache[-2:]
            state.running_mean *= (1 - state.momentum)
            state.running_mean += state.momentum * mean
            state.running_var *= (1 - state.momentum)
            state.running_var += state.momentum * var
        elif mode == 'calibrate':
            if self._accumulator is None:
                self._accumulator = _MomentAccumulator()
            self._accumulator.update(x)

        return out

    def backward(self, dout):
        dx, dscale, dshift = ops.batch_norm_backward(dout, self._cache)
        self.bundle.accumulate_grad(self.name + '.scale', dscale)
        self.bundle.accumulate_grad(self.name + '.shift', dshift)
        return dx

    def start_calibration(self):
        self._accumulator = _MomentAccumulator()

    def finish_calibration(self):
        accumulator, self._accumulator = self._accumulator, None
        self.state.running_mean[...] = accumulator.mean
        self.state.running_var[...] = accumulator.variance

    def abort_calibration(self):
        self._accumulator = None

    def batch_norms(self):
        return [self]


class ReLU:

    def forward(self, x, mode='train'):
        out, self._mask = ops.relu_forward(x)
        return out

    def backward(self, dout):
        return ops.relu_backward(dout, self._mask)

    def batch_norms(self):
        return []


class MaxPool2d:

    def __init__(self, kernel_size=3, stride=2):
        self.kernel_size = kernel_size
        self.stride = stride

    def forward(self, x, mode='train'):
        out, self._cache = ops.max_pool_forward(x, self.kernel_size, self.stride)
        return out

    def backward(self, dout):
        return ops.max_pool_backward(dout, self._cache)

    def batch_norms(self):
        return []


class GlobalAvgPool:

    def forward(self, x, mode='train'):
        out, self._shape = ops.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return ops.global_avg_pool_backward(dout, self._shape)

    def batch_norms(self):
        return []


class Linear:

    def __init__(self, bundle, name):
        self.bundle = bundle
        self.name = name

    def forward(self, x, mode='train'):
        out, self._cache = ops.fully_connected_forward(
            x, self.bundle.params[self.name + '.weight'],
            self.bundle.params[self.name + '.bias'])
        return out

    def backward(self, dout):
        dx, dweight, dbias = ops.fully_connected_backward(dout, self._cache)
        self.bundle.accumulate_grad(self.name + '.weight', dweight)
        self.bundle.accumulate_grad(self.name + '.bias', dbias)
        return dx

    def batch_norms(self):
        return []


class Sigmoid:

    def forward(self, x, mode='train'):
        out, self._out = ops.sigmoid_forward(x)
        return out

    def backward(self, dout):
        return ops.sigmoid_backward(dout, self._out)

    def batch_norms(self):
        return []


class Sequential:

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, mode='train'):
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def batch_norms(self):
        return [bn for layer in self.layers for bn in layer.batch_norms()]

    def __len__(self):
        return len(self.layers)


class ChoiceBlock:
    """
    A ShuffleNetv2 unit: channel split (stride 1) or two parallel
    branches (stride 2), concatenation, then a 2-group channel shuffle.
    """

    def __init__(self, left, right):
        self.left = left
        self.right = right

    def forward(self, x, mode='train'):
        if self.left is None:
            (passthrough, branch), _ = ops.channel_split_forward(x)
            first = passthrough
            second = self.right.forward(branch, mode)
        else:
            first = self.left.forward(x, mode)
            second = self.right.forward(x, mode)
        out, self._split_at = ops.concat_forward(first, second)
        out, self._groups = ops.channel_shuffle_forward(out, groups=2)
        return out

    def backward(self, dout):
        dout = ops.channel_shuffle_backward(dout, self._groups)
        dfirst, dsecond = ops.concat_backward(dout, self._split_at)
        if self.left is None:
            return ops.channel_split_backward(dfirst, self.right.backward(dsecond))
        return self.left.backward(dfirst) + self.right.backward(dsecond)

    def batch_norms(self):
        norms = [] if self.left is None else self.left.batch_norms()
        return norms + self.right.batch_norms()


def _he_normal(rng, shape, fan_in):
    if rng is None:
        return np.zeros(shape, dtype=np.float32)
    return rng.normal(0., np.sqrt(2. / fan_in), size=shape).astype(np.float32)


def init_parameters(bundle, layers, rng=None):
    """
    Create the parameters and buffers of ``layers`` (a list of
    `~backbone_nas.search_space.LayerSpec`) in ``bundle``: convolution
    weights from a zero-mean normal with variance ``2 / fan_in``, batch
    norm scale 1 and shift 0, running mean 0 and variance 1. Without
    ``rng`` the weights are left at zero (a skeleton to load into).
    """
    for spec in layers:
        if spec.kind == 'conv':
            c_group = spec.in_channels // spec.groups
            shape = (spec.out_channels, c_group, spec.kernel_size, spec.kernel_size)
            bundle.add_parameter(spec.name + '.weight',
                                 _he_normal(rng, shape, c_group * spec.kernel_size ** 2))
        elif spec.kind == 'bn':
            channels = spec.out_channels
            bundle.add_parameter(spec.name + '.scale', np.ones(channels))
            bundle.add_parameter(spec.name + '.shift', np.zeros(channels))
            bundle.add_buffer(spec.name + '.running_mean', np.zeros(channels))
            bundle.add_buffer(spec.name + '.running_var', np.ones(channels))
    return bundle


def init_linear(bundle, name, in_features, out_features, rng=None):
    bundle.add_parameter(name + '.weight',
                         _he_normal(rng, (out_features, in_features), in_features))
    bundle.add_parameter(name + '.bias', np.zeros(out_features))
    return bundle


def build_sequential(bundle, layers, private_statistics=True):
    """
    Bind a list of `~backbone_nas.search_space.LayerSpec` to the arrays of
    ``bundle``.
    """
    built = []
    for spec in layers:
        if spec.kind == 'conv':
            built.append(Conv2d(bundle, spec.name, stride=spec.stride,
                                groups=spec.groups))
        elif spec.kind == 'bn':
            built.append(BatchNorm2d(bundle, spec.name,
                                     private_statistics=private_statistics))
        elif spec.kind == 'relu':
            built.append(ReLU())
        elif spec.kind == 'maxpool':
            built.append(MaxPool2d(spec.kernel_size, spec.stride))
        else:
            raise ValueError("Unknown layer kind {0!r}".format(spec.kind))
    return Sequential(built)


def recompute_bn_statistics(network, calibration_batches):
    """
    Replace the running statistics of every batch norm in ``network`` by
    the exact mean and (biased) variance of its inputs over the
    calibration set.

    The network runs forward only, normalizing with the statistics of each
    calibration batch; no gradient is computed and no learnable parameter
    changes.

    Parameters
    ----------
    network : object
        Anything with ``forward(x, mode)`` and ``batch_norms()``.
    calibration_batches : iterable of `~numpy.ndarray`
        Input batches, consumed in order.

    Returns
    -------
    states : list of `BatchNormState`
        The recalibrated states, in network order.
    """
    norms = network.batch_norms()
    for bn in norms:
        bn.start_calibration()

    count = 0
    try:
        for batch in calibration_batches:
            if len(batch) < 2:
                warnings.warn("Calibration batch of {0} item(s); the batch "
                              "statistics used for normalization are "
                              "degenerate".format(len(batch)), CalibrationWarning)
            network.forward(batch, mode='calibrate')
            count += 1
    except Exception:
        for bn in norms:
            bn.abort_calibration()
        raise

    if count == 0:
        for bn in norms:
            bn.abort_calibration()
        raise ValueError("Cannot recompute batch norm statistics from an "
                         "empty calibration set")

    for bn in norms:
        bn.finish_calibration()

    return [bn.state for bn in norms]
