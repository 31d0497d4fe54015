# Licensed under a 3-clause BSD style license - see LICENSE.rst

from astropy import config as _config

from ._astropy_init import __version__, test


class Conf(_config.ConfigNamespace):
    """
    Configuration parameters for `backbone_nas`.
    """

    num_cores = _config.ConfigItem(
        1, "Number of joblib workers used to evaluate candidate architectures.")
    show_progress = _config.ConfigItem(
        False, "Show progress bars during training and search.")
    log_interval = _config.ConfigItem(
        100, "Training iterations between two progress log messages.")
    calibration_batch_size = _config.ConfigItem(
        100, "Minibatch size of batch norm recalibration.")
    evaluation_batch_size = _config.ConfigItem(
        200, "Minibatch size of path evaluation.")


conf = Conf()

from .search_space import (ChoiceKind, SearchSpaceSpec, StageSpec, Architecture,
                           LARGE_SPACE, SMALL_SPACE, DESK_SPACE, get_space,
                           parse_architecture, random_architecture,
                           baseline_architecture, cardinality)
from .flops import architecture_flops, flops_range, sample_flops, Constraint
from .tasks import TaskSpec, TaskData, build_task_data, box_iou
from .supernet import (SupernetWeights, PathNetwork, TrainingSchedule,
                       instantiate_path, train_supernet, train_standalone,
                       evaluate_path, SupernetEvaluator)
from .evolution import (EvolutionConfig, SearchResult, run_search, TabularFitness,
                        ExhaustiveOracle, rank_correlation, sign_test)
from .patterns import pattern_report
from .config import RunConfig

# Import the following sub-packages to make sure the I/O functions are registered
from .io import checkpoint
del checkpoint

__all__ = ['conf', 'ChoiceKind', 'SearchSpaceSpec', 'StageSpec', 'Architecture',
           'LARGE_SPACE', 'SMALL_SPACE', 'DESK_SPACE', 'get_space',
           'parse_architecture', 'random_architecture', 'baseline_architecture',
           'cardinality', 'architecture_flops', 'flops_range', 'sample_flops',
           'Constraint', 'TaskSpec', 'TaskData', 'build_task_data', 'box_iou',
           'SupernetWeights', 'PathNetwork', 'TrainingSchedule', 'instantiate_path',
           'train_supernet', 'train_standalone', 'evaluate_path', 'SupernetEvaluator',
           'EvolutionConfig', 'SearchResult', 'run_search', 'TabularFitness',
           'ExhaustiveOracle', 'rank_correlation', 'sign_test', 'pattern_report',
           'RunConfig']
