"""
Search spaces, architecture encoding and choice-block topology.

A search space is a ShuffleNetv2-style backbone: a 3x3 convolutional stem
followed by stages of choice blocks. Every block offers the same four
choices and an architecture (a path through the supernet) picks one
choice per block.
"""

import enum
import itertools
import os
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from astropy.extern.configobj import configobj

from .utils import (InvalidConfigurationError, InvalidArchitectureError,
                    ArchitectureParseError, cached)

__all__ = ['ChoiceKind', 'LayerSpec', 'BlockSite', 'StageSpec',
           'SearchSpaceSpec', 'Architecture', 'LARGE_SPACE', 'SMALL_SPACE',
           'DESK_SPACE', 'SPACE_PRESETS', 'get_space', 'read_space_file',
           'write_space_file', 'block_layout', 'stem_layout',
           'cardinality', 'random_architecture', 'baseline_architecture',
           'parse_architecture', 'enumerate_architectures']


class ChoiceKind(enum.IntEnum):
    """
    The four block variants available at every searchable position.
    """

    SHUFFLE_3X3 = 0
    SHUFFLE_5X5 = 1
    SHUFFLE_7X7 = 2
    XCEPTION_3X3 = 3

    @property
    def kernel_size(self):
        return _KERNEL_SIZES[self]

    @property
    def symbol(self):
        return _SYMBOLS[self]

    @classmethod
    def from_token(cls, token):
        """
        Convert an integer (``'2'``) or symbolic (``'7x7'``, ``'xcep'``)
        token to a choice. Raises `KeyError` for unknown tokens.
        """
        token = token.strip().lower()
        if token.isdigit():
            value = int(token)
            if value not in cls._value2member_map_:
                raise KeyError(token)
            return cls(value)
        return _TOKENS[token]


_KERNEL_SIZES = {ChoiceKind.SHUFFLE_3X3: 3,
                 ChoiceKind.SHUFFLE_5X5: 5,
                 ChoiceKind.SHUFFLE_7X7: 7,
                 ChoiceKind.XCEPTION_3X3: 3}

_SYMBOLS = {ChoiceKind.SHUFFLE_3X3: '3x3',
            ChoiceKind.SHUFFLE_5X5: '5x5',
            ChoiceKind.SHUFFLE_7X7: '7x7',
            ChoiceKind.XCEPTION_3X3: 'xcep'}

_TOKENS = {'3x3': ChoiceKind.SHUFFLE_3X3,
           '5x5': ChoiceKind.SHUFFLE_5X5,
           '7x7': ChoiceKind.SHUFFLE_7X7,
           'xcep': ChoiceKind.XCEPTION_3X3,
           'xception': ChoiceKind.XCEPTION_3X3,
           'x3x3': ChoiceKind.XCEPTION_3X3}

NUM_CHOICES = len(ChoiceKind)


# kind is one of 'conv', 'bn', 'relu' or 'maxpool'. For 'bn' and 'relu'
# only ``channels`` (stored in out_channels) is meaningful.
LayerSpec = namedtuple('LayerSpec', ['kind', 'name', 'in_channels',
                                     'out_channels', 'kernel_size', 'stride',
                                     'groups'])


def _conv(name, in_channels, out_channels, kernel_size=1, stride=1, depthwise=False):
    groups = in_channels if depthwise else 1
    if depthwise and in_channels != out_channels:
        raise InvalidConfigurationError("Depthwise convolution {0} needs equal "
                                        "input and output channels, got {1} "
                                        "and {2}".format(name, in_channels,
                                                         out_channels))
    return LayerSpec('conv', name, in_channels, out_channels, kernel_size,
                     stride, groups)


def _bn(name, channels):
    return LayerSpec('bn', name, channels, channels, 1, 1, 1)


def _relu(channels):
    return LayerSpec('relu', None, channels, channels, 1, 1, 1)


def stem_layout(stem_channels, pool=False, in_channels=3):
    """
    Layer list of the stem: 3x3 conv stride 2, BN, ReLU and optionally a
    3x3 max-pool with stride 2.
    """
    layers = [_conv('conv', in_channels, stem_channels, 3, 2),
              _bn('bn', stem_channels),
              _relu(stem_channels)]
    if pool:
        layers.append(LayerSpec('maxpool', None, stem_channels, stem_channels,
                                3, 2, 1))
    return layers


def block_layout(choice, in_channels, out_channels, stride):
    """
    Layer lists of the two branches of a choice block.

    Parameters
    ----------
    choice : `ChoiceKind`
    in_channels, out_channels : int
    stride : {1, 2}

    Returns
    -------
    left : list of `LayerSpec` or None
        The left branch; `None` for stride-1 blocks, whose left half of the
        channels passes through unchanged.
    right : list of `LayerSpec`
        The right branch.
    """
    choice = ChoiceKind(choice)

    if stride not in (1, 2):
        raise InvalidConfigurationError("Block stride must be 1 or 2, got {0}"
                                        .format(stride))
    if out_channels % 2 != 0 or out_channels <= 0:
        raise InvalidConfigurationError("Block output channels must be a "
                                        "positive even number, got {0}"
                                        .format(out_channels))

    mid = out_channels // 2
    k = choice.kernel_size

    if stride == 1:
        if in_channels != out_channels or in_channels % 2 != 0:
            raise InvalidConfigurationError("A stride-1 block splits its {0} "
                                            "input channels into two halves "
                                            "producing {1} channels; this is "
                                            "impossible".format(in_channels,
                                                                out_channels))
        left = None
        branch_in = mid
    else:
        left = [_conv('left.dw', in_channels, in_channels, k, 2, depthwise=True),
                _bn('left.dw_bn', in_channels),
                _conv('left.pw', in_channels, mid),
                _bn('left.pw_bn', mid),
                _relu(mid)]
        branch_in = in_channels

    if choice == ChoiceKind.XCEPTION_3X3:
        right = []
        channels = branch_in
        for rep in range(1, 4):
            right += [_conv('right.dw{0}'.format(rep), channels, channels, 3,
                            stride if rep == 1 else 1, depthwise=True),
                      _bn('right.dw{0}_bn'.format(rep), channels),
                      _conv('right.pw{0}'.format(rep), channels, mid),
                      _bn('right.pw{0}_bn'.format(rep), mid),
                      _relu(mid)]
            channels = mid
    else:
        right = [_conv('right.pw1', branch_in, mid),
                 _bn('right.pw1_bn', mid),
                 _relu(mid),
                 _conv('right.dw', mid, mid, k, stride, depthwise=True),
                 _bn('right.dw_bn', mid),
                 _conv('right.pw2', mid, mid),
                 _bn('right.pw2_bn', mid),
                 _relu(mid)]

    return left, right


BlockSite = namedtuple('BlockSite', ['index', 'stage', 'in_channels',
                                     'out_channels', 'stride'])


@dataclass(frozen=True)
class StageSpec:
    """
    One stage of searchable blocks.
    """

    out_channels: int
    num_blocks: int
    first_block_stride: int = 2

    def __post_init__(self):
        if int(self.out_channels) <= 0 or int(self.out_channels) % 2 != 0:
            raise InvalidConfigurationError("Stage channels must be a positive "
                                            "even number (channel split), got "
                                            "{0}".format(self.out_channels))
        if int(self.num_blocks) <= 0:
            raise InvalidConfigurationError("Stage block count must be positive, "
                                            "got {0}".format(self.num_blocks))
        if self.first_block_stride not in (1, 2):
            raise InvalidConfigurationError("first_block_stride must be 1 or 2, "
                                            "got {0}".format(self.first_block_stride))


@dataclass(frozen=True)
class SearchSpaceSpec:
    """
    Stage/channel/block-count table of a search space.

    Parameters
    ----------
    stem_channels : int
        Output channels of the 3x3 stride-2 stem convolution.
    stages : tuple of `StageSpec`
        The searchable stages in order.
    input_resolution : tuple of int
        (height, width) used for FLOPs reporting.
    stem_pool : bool
        Whether the stem ends with a 3x3 stride-2 max-pool.
    head_outputs : int or None
        When set, a global-average-pool + fully connected classifier with
        this many outputs is attached and counted in the FLOPs.
    name : str
        Free-form label, used in reports.
    """

    stem_channels: int
    stages: tuple
    input_resolution: tuple = (224, 224)
    stem_pool: bool = False
    head_outputs: int = None
    name: str = field(default='custom', compare=False)

    def __post_init__(self):
        if int(self.stem_channels) <= 0:
            raise InvalidConfigurationError("stem_channels must be positive, "
                                            "got {0}".format(self.stem_channels))
        stages = tuple(stage if isinstance(stage, StageSpec) else StageSpec(*stage)
                       for stage in self.stages)
        if len(stages) == 0:
            raise InvalidConfigurationError("A search space needs at least one stage")
        object.__setattr__(self, 'stages', stages)
        object.__setattr__(self, 'input_resolution',
                           tuple(int(x) for x in self.input_resolution))
        if len(self.input_resolution) != 2 or min(self.input_resolution) <= 0:
            raise InvalidConfigurationError("input_resolution must be a positive "
                                            "(height, width) pair, got {0}"
                                            .format(self.input_resolution))
        if self.head_outputs is not None and int(self.head_outputs) <= 0:
            raise InvalidConfigurationError("head_outputs must be positive")

        # validates channel bookkeeping of every block up front
        for site in self.block_sites():
            block_layout(ChoiceKind.SHUFFLE_3X3, site.in_channels,
                         site.out_channels, site.stride)

    @property
    def num_blocks(self):
        return sum(stage.num_blocks for stage in self.stages)

    @property
    def num_stages(self):
        return len(self.stages)

    @property
    def final_channels(self):
        return self.stages[-1].out_channels

    def block_sites(self):
        """
        List of `BlockSite` for every searchable block, in order.
        """
        sites = []
        channels = self.stem_channels
        for stage_index, stage in enumerate(self.stages):
            for position in range(stage.num_blocks):
                stride = stage.first_block_stride if position == 0 else 1
                sites.append(BlockSite(len(sites), stage_index, channels,
                                       stage.out_channels, stride))
                channels = stage.out_channels
        return sites

    def stage_of_block(self):
        """
        Array mapping block index to stage index.
        """
        return np.array([site.stage for site in self.block_sites()], dtype=int)

    def with_resolution(self, resolution):
        if np.isscalar(resolution):
            resolution = (resolution, resolution)
        return replace(self, input_resolution=tuple(resolution))

    def with_head(self, head_outputs):
        return replace(self, head_outputs=head_outputs)

    def scaled(self, factor):
        """
        Copy of this space with every channel count multiplied by
        ``factor`` and rounded to the nearest even integer (at least 2).
        """
        if factor <= 0:
            raise InvalidConfigurationError("Width multiplier must be positive")

        def even(c):
            return max(2, 2 * int(round(c * factor / 2.)))

        stages = tuple(replace(stage, out_channels=even(stage.out_channels))
                       for stage in self.stages)
        return replace(self, stem_channels=max(1, int(round(self.stem_channels * factor))),
                       stages=stages)

    @cached
    def block_layouts(self):
        """
        Tuple indexed by block then choice of ``(left, right)`` layer lists.
        """
        return tuple(tuple(block_layout(choice, site.in_channels,
                                        site.out_channels, site.stride)
                           for choice in ChoiceKind)
                     for site in self.block_sites())

    def __str__(self):
        stages = ", ".join("{0}x{1}".format(stage.out_channels, stage.num_blocks)
                           for stage in self.stages)
        return ("SearchSpaceSpec {0}: stem={1}, stages=[{2}], {3} blocks, "
                "input={4}x{5}".format(self.name, self.stem_channels, stages,
                                       self.num_blocks, *self.input_resolution))


LARGE_SPACE = SearchSpaceSpec(48, ((96, 8), (240, 8), (480, 16), (960, 8)),
                              name='large')
SMALL_SPACE = SearchSpaceSpec(16, ((64, 4), (160, 4), (320, 8), (640, 4)),
                              name='small')
DESK_SPACE = SearchSpaceSpec(16, ((32, 2), (64, 2), (128, 2), (256, 2)),
                             name='desk')

SPACE_PRESETS = {'large': LARGE_SPACE,
                 'small': SMALL_SPACE,
                 'desk': DESK_SPACE}


def get_space(name_or_path):
    """
    Return a preset search space by name, or read a custom space file.
    """
    key = str(name_or_path).strip().lower()
    if key in SPACE_PRESETS:
        return SPACE_PRESETS[key]
    if os.path.exists(str(name_or_path)):
        return read_space_file(name_or_path)
    raise InvalidConfigurationError("Unknown search space '{0}'; expected one "
                                    "of {1} or an existing space file"
                                    .format(name_or_path, sorted(SPACE_PRESETS)))


def read_space_file(filename):
    """
    Read a custom search space written as ``key = value`` lines::

        stem_channels = 16
        input_resolution = 224, 224
        stem_pool = false
        stage1 = 64, 4
        stage2 = 160, 4

    Each ``stageN`` entry is ``channels, blocks`` with an optional third
    value giving the first block's stride (default 2).
    """
    try:
        cfg = configobj.ConfigObj(str(filename), file_error=True)
    except (IOError, configobj.ConfigObjError) as ex:
        raise InvalidConfigurationError("Could not read space file {0}: {1}"
                                        .format(filename, ex))

    def ints(value):
        if isinstance(value, str):
            value = value.split(',')
        try:
            return [int(v) for v in value]
        except ValueError:
            raise InvalidConfigurationError("Expected integers in space file "
                                            "{0}, got {1!r}".format(filename, value))

    stage_keys = sorted((key for key in cfg if key.lower().startswith('stage')),
                        key=lambda key: int(key[5:].lstrip('._') or 0))
    stages = []
    for key in stage_keys:
        values = ints(cfg[key])
        if len(values) not in (2, 3):
            raise InvalidConfigurationError("{0} must be 'channels, blocks[, stride]'"
                                            .format(key))
        stages.append(StageSpec(*values))

    if 'stem_channels' not in cfg:
        raise InvalidConfigurationError("Space file {0} lacks stem_channels"
                                        .format(filename))

    resolution = ints(cfg.get('input_resolution', '224, 224'))
    if len(resolution) == 1:
        resolution = resolution * 2
    stem_pool = str(cfg.get('stem_pool', 'false')).strip().lower() in ('1', 'true', 'yes')
    name = cfg.get('name', os.path.splitext(os.path.basename(str(filename)))[0])

    return SearchSpaceSpec(ints(cfg['stem_channels'])[0], tuple(stages),
                           input_resolution=tuple(resolution),
                           stem_pool=stem_pool, name=name)


def write_space_file(space, filename):
    cfg = configobj.ConfigObj()
    cfg.filename = str(filename)
    cfg['name'] = space.name
    cfg['stem_channels'] = str(space.stem_channels)
    cfg['input_resolution'] = "{0}, {1}".format(*space.input_resolution)
    cfg['stem_pool'] = 'true' if space.stem_pool else 'false'
    for index, stage in enumerate(space.stages):
        cfg['stage{0}'.format(index + 1)] = "{0}, {1}, {2}".format(
            stage.out_channels, stage.num_blocks, stage.first_block_stride)
    cfg.write()


@dataclass(frozen=True)
class Architecture:
    """
    A path through the supernet: one `ChoiceKind` per searchable block.

    The canonical text form is the comma-separated integer encoding
    (``str(arch)``); `to_symbolic` gives the ``3x3,7x7,xcep`` form.
    """

    choices: tuple

    def __post_init__(self):
        try:
            choices = tuple(ChoiceKind(int(c)) for c in self.choices)
        except ValueError as ex:
            raise InvalidArchitectureError(str(ex))
        object.__setattr__(self, 'choices', choices)

    def __len__(self):
        return len(self.choices)

    def __iter__(self):
        return iter(self.choices)

    def __getitem__(self, index):
        return self.choices[index]

    def __str__(self):
        return ",".join(str(int(c)) for c in self.choices)

    def to_symbolic(self):
        return ",".join(c.symbol for c in self.choices)

    def to_array(self):
        return np.array([int(c) for c in self.choices], dtype=np.int64)

    def replace_choice(self, index, choice):
        choices = list(self.choices)
        choices[index] = ChoiceKind(choice)
        return Architecture(tuple(choices))

    def validate(self, space):
        """
        Raise `InvalidArchitectureError` unless this architecture belongs
        to ``space``.
        """
        if len(self) != space.num_blocks:
            raise InvalidArchitectureError("Architecture has {0} choices but the "
                                           "search space has {1} blocks"
                                           .format(len(self), space.num_blocks))
        return self

    @classmethod
    def from_array(cls, values):
        return cls(tuple(int(v) for v in np.asarray(values).ravel()))


def cardinality(space):
    """
    Number of distinct architectures in ``space`` (an exact integer).
    """
    return NUM_CHOICES ** space.num_blocks


def _as_rng(rng):
    return np.random.default_rng(rng)


def random_architecture(space, rng=None):
    """
    Draw every block choice independently and uniformly.
    """
    rng = _as_rng(rng)
    return Architecture.from_array(rng.integers(0, NUM_CHOICES, size=space.num_blocks))


def baseline_architecture(space):
    """
    The hand-crafted ShuffleNetv2 backbone of ``space``: every block 3x3.
    """
    return Architecture((ChoiceKind.SHUFFLE_3X3,) * space.num_blocks)


def enumerate_architectures(space, max_blocks=6):
    """
    Iterate over every architecture of a small space in lexicographic order.
    """
    if space.num_blocks > max_blocks:
        raise InvalidConfigurationError("Refusing to enumerate {0} architectures "
                                        "({1} blocks > {2})"
                                        .format(cardinality(space),
                                                space.num_blocks, max_blocks))
    for choices in itertools.product(ChoiceKind, repeat=space.num_blocks):
        yield Architecture(choices)


def parse_architecture(text, space):
    """
    Parse the integer (``0,2,1``) or symbolic (``3x3,7x7,5x5``) text form.

    Parameters
    ----------
    text : str
        Comma separated tokens; integer and symbolic tokens may be mixed.
    space : `SearchSpaceSpec` or int
        The space the architecture must belong to, or its block count.

    Raises
    ------
    ArchitectureParseError
        On an unknown token or a wrong number of tokens. The exception's
        ``position`` attribute is the 0-based offending position.
    """
    expected = space if isinstance(space, int) else space.num_blocks
    tokens = [token.strip() for token in str(text).strip().split(',')]

    choices = []
    for position, token in enumerate(tokens):
        try:
            choices.append(ChoiceKind.from_token(token))
        except KeyError:
            raise ArchitectureParseError("Unknown block choice {0!r} at position {1}"
                                         .format(token, position),
                                         position=position, token=token)

    if len(choices) != expected:
        position = min(len(choices), expected)
        raise ArchitectureParseError("Expected {0} block choices, got {1} "
                                     "(mismatch at position {2})"
                                     .format(expected, len(choices), position),
                                     position=position)

    return Architecture(tuple(choices))
