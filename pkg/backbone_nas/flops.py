"""
Multiply-accumulate cost model of the search spaces.

FLOPs here means multiply-accumulates of convolutions and fully connected
layers; batch norm, ReLU, pooling and channel shuffle cost nothing.
"""

import math
from dataclasses import dataclass

import numpy as np

from .search_space import (ChoiceKind, NUM_CHOICES, Architecture, block_layout,
                           stem_layout, _as_rng)
from .utils import InvalidConfigurationError, InvalidArchitectureError

__all__ = ['conv_output_size', 'conv_macs', 'layers_flops', 'block_flops',
           'stem_flops', 'head_flops', 'block_cost_table', 'architecture_flops',
           'flops_range', 'sample_flops', 'Constraint']


def conv_output_size(size, kernel_size, stride):
    """
    Output length of a same-padded (padding ``kernel_size // 2``) convolution
    or pooling window.
    """
    pad = kernel_size // 2
    return (size + 2 * pad - kernel_size) // stride + 1


def conv_macs(in_channels, out_channels, kernel_size, out_resolution, groups=1):
    """
    ``(c_in / groups) * c_out * k_h * k_w * H_out * W_out``
    """
    if np.isscalar(kernel_size):
        kernel_size = (kernel_size, kernel_size)
    out_h, out_w = out_resolution
    return ((in_channels // groups) * out_channels * kernel_size[0] *
            kernel_size[1] * out_h * out_w)


def layers_flops(layers, in_resolution):
    """
    Sum the MACs of a layer list, tracking the spatial resolution.

    Returns
    -------
    macs : int
    out_resolution : tuple of int
    """
    h, w = in_resolution
    total = 0
    for layer in layers:
        if layer.kind in ('conv', 'maxpool'):
            h = conv_output_size(h, layer.kernel_size, layer.stride)
            w = conv_output_size(w, layer.kernel_size, layer.stride)
        if layer.kind == 'conv':
            total += conv_macs(layer.in_channels, layer.out_channels,
                               layer.kernel_size, (h, w), groups=layer.groups)
    return total, (h, w)


def block_flops(choice, in_channels, out_channels, stride, in_resolution):
    """
    MACs of one choice block.

    Raises
    ------
    InvalidConfigurationError
        For odd channel counts (the channel split is impossible) or a stride
        other than 1 and 2.
    """
    left, right = block_layout(choice, in_channels, out_channels, stride)
    total, out_resolution = layers_flops(right, in_resolution)
    if left is not None:
        total += layers_flops(left, in_resolution)[0]
    return total


def stem_flops(space, resolution=None):
    """
    MACs of the stem and the resolution it hands to the first block.
    """
    resolution = space.input_resolution if resolution is None else resolution
    return layers_flops(stem_layout(space.stem_channels, pool=space.stem_pool),
                        resolution)


def head_flops(space, outputs=None):
    outputs = space.head_outputs if outputs is None else outputs
    if outputs is None:
        return 0
    return space.final_channels * outputs


def block_cost_table(space, resolution=None):
    """
    Array of shape ``(num_blocks, 4)`` holding the MACs of every choice of
    every block. Block resolutions do not depend on the choices, so any
    architecture's cost is the stem and head plus one entry per row.
    """
    resolution = space.input_resolution if resolution is None else tuple(resolution)
    _, (h, w) = stem_flops(space, resolution)
    table = np.zeros((space.num_blocks, NUM_CHOICES), dtype=np.int64)
    for site in space.block_sites():
        for choice in ChoiceKind:
            table[site.index, choice] = block_flops(choice, site.in_channels,
                                                    site.out_channels,
                                                    site.stride, (h, w))
        h = conv_output_size(h, 3, site.stride)
        w = conv_output_size(w, 3, site.stride)
    return table


def _fixed_flops(space, resolution):
    return stem_flops(space, resolution)[0] + head_flops(space)


def architecture_flops(arch, space, resolution=None):
    """
    Total MACs of an architecture: stem, every block and, when the space
    has a head attached, the classifier.

    Parameters
    ----------
    arch : `Architecture`
    space : `SearchSpaceSpec`
    resolution : tuple of int, optional
        Input (height, width); defaults to ``space.input_resolution``.
    """
    if not isinstance(arch, Architecture):
        arch = Architecture(tuple(arch))
    if len(arch) != space.num_blocks:
        raise InvalidArchitectureError("Architecture has {0} choices but the "
                                       "search space has {1} blocks"
                                       .format(len(arch), space.num_blocks))
    resolution = space.input_resolution if resolution is None else tuple(resolution)
    table = _cost_table(space, resolution)
    index = np.arange(space.num_blocks)
    return int(_fixed_flops(space, resolution) +
               int(table[index, arch.to_array()].sum()))


_COST_TABLES = {}


def _cost_table(space, resolution):
    # SearchSpaceSpec is frozen and hashable
    key = (space, resolution)
    if key not in _COST_TABLES:
        _COST_TABLES[key] = block_cost_table(space, resolution)
    return _COST_TABLES[key]


def flops_range(space, resolution=None):
    """
    Minimum and maximum achievable MACs over the whole space.
    """
    resolution = space.input_resolution if resolution is None else tuple(resolution)
    table = _cost_table(space, resolution)
    fixed = _fixed_flops(space, resolution)
    return (int(fixed + table.min(axis=1).sum()),
            int(fixed + table.max(axis=1).sum()))


def sample_flops(space, count, rng=None, resolution=None):
    """
    MACs of ``count`` uniformly sampled architectures.
    """
    rng = _as_rng(rng)
    resolution = space.input_resolution if resolution is None else tuple(resolution)
    table = _cost_table(space, resolution)
    choices = rng.integers(0, NUM_CHOICES, size=(count, space.num_blocks))
    per_block = table[np.arange(space.num_blocks)[None, :], choices]
    return _fixed_flops(space, resolution) + per_block.sum(axis=1)


@dataclass(frozen=True)
class Constraint:
    """
    Hard FLOPs budget: an architecture satisfies the constraint when its
    MACs at the space's reporting resolution do not exceed ``max_flops``.
    ``max_flops`` may be ``math.inf`` for an unconstrained search.
    """

    max_flops: float = math.inf

    def __post_init__(self):
        if not self.max_flops > 0:
            raise InvalidConfigurationError("max_flops must be positive, got {0}"
                                            .format(self.max_flops))

    def satisfies(self, arch, space):
        return architecture_flops(arch, space) <= self.max_flops

    def satisfies_flops(self, flops):
        return flops <= self.max_flops

    def is_feasible(self, space):
        """
        Whether the cheapest architecture of ``space`` meets the budget.
        """
        return flops_range(space)[0] <= self.max_flops

    def __str__(self):
        if math.isinf(self.max_flops):
            return "unconstrained"
        return "FLOPs <= {0:d}".format(int(self.max_flops))
