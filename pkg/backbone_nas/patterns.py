"""
Per-stage choice statistics of a set of architectures.
"""

import numpy as np

from astropy.table import Table

from .search_space import ChoiceKind, NUM_CHOICES, Architecture
from .utils import InvalidArchitectureError

__all__ = ['PatternReport', 'pattern_report', 'DIAGRAM_SYMBOLS']

DIAGRAM_SYMBOLS = {ChoiceKind.SHUFFLE_3X3: '3',
                   ChoiceKind.SHUFFLE_5X5: '5',
                   ChoiceKind.SHUFFLE_7X7: '7',
                   ChoiceKind.XCEPTION_3X3: 'X'}


class PatternReport:
    """
    Choice histogram of every stage over a list of architectures.

    Attributes
    ----------
    counts : `~numpy.ndarray`
        Integer array of shape (num_stages, 4).
    """

    def __init__(self, archs, space, labels=None):
        self.archs = list(archs)
        self.space = space
        self.labels = list(labels) if labels is not None else [
            "arch {0}".format(i) for i in range(len(self.archs))]
        stage_of_block = space.stage_of_block()
        self.counts = np.zeros((space.num_stages, NUM_CHOICES), dtype=np.int64)
        for arch in self.archs:
            np.add.at(self.counts, (stage_of_block, arch.to_array()), 1)

    @property
    def frequencies(self):
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def to_table(self):
        table = Table()
        table['stage'] = np.arange(1, self.space.num_stages + 1)
        table['out_channels'] = [stage.out_channels for stage in self.space.stages]
        table['blocks'] = [stage.num_blocks for stage in self.space.stages]
        for choice in ChoiceKind:
            table['count_' + choice.symbol] = self.counts[:, choice]
        for choice in ChoiceKind:
            column = 'freq_' + choice.symbol
            table[column] = self.frequencies[:, choice]
            table[column].info.format = '.4f'
        return table

    def write_csv(self, filename):
        self.to_table().write(filename, format='ascii.csv', overwrite=True)

    def diagram(self):
        """
        One row per architecture, one symbol per block (``3``, ``5``, ``7``
        or ``X``), stages separated by ``|``, followed by the per-stage
        percentages.
        """
        stage_of_block = self.space.stage_of_block()
        width = max(len(label) for label in self.labels)
        lines = []
        for label, arch in zip(self.labels, self.archs):
            stages = []
            for stage in range(self.space.num_stages):
                stages.append("".join(DIAGRAM_SYMBOLS[choice]
                                      for choice, s in zip(arch, stage_of_block)
                                      if s == stage))
            lines.append("{0:<{1}}  {2}".format(label, width, " | ".join(stages)))
        lines.append("")
        for index, stage in enumerate(self.space.stages):
            shares = "  ".join("{0} {1:5.1f}%".format(choice.symbol,
                                                      100 * self.frequencies[index, choice])
                               for choice in ChoiceKind)
            lines.append("stage {0} ({1} ch, {2} blocks): {3}"
                         .format(index + 1, stage.out_channels, stage.num_blocks, shares))
        return "\n".join(lines) + "\n"

    def __str__(self):
        return self.diagram()


def pattern_report(archs, space, labels=None):
    """
    Count the choices of every stage over ``archs``.

    Raises
    ------
    ValueError
        For an empty list.
    InvalidArchitectureError
        When an architecture does not belong to ``space``.
    """
    archs = [arch if isinstance(arch, Architecture) else Architecture(tuple(arch))
             for arch in archs]
    if not archs:
        raise ValueError("pattern_report needs at least one architecture")
    lengths = sorted(set(len(arch) for arch in archs))
    if len(lengths) > 1:
        raise InvalidArchitectureError("Architectures come from different search "
                                       "spaces (lengths {0})".format(lengths))
    archs[0].validate(space)
    return PatternReport(archs, space, labels=labels)
