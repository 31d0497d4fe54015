"""
The weight-sharing supernet: shared parameter store, path instantiation,
single-path training and path evaluation.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from astropy import log
from astropy.io.registry import UnifiedReadWriteMethod
from astropy.utils.console import ProgressBar

from .io.core import SupernetWeightsRead, SupernetWeightsWrite
from .layers import (ParameterBundle, ChoiceBlock, GlobalAvgPool, Linear, Sigmoid,
                     Sequential, init_parameters, init_linear, build_sequential,
                     recompute_bn_statistics)
from .optim import SgdConfig, sgd_update_bundles
from .search_space import (Architecture, ChoiceKind, stem_layout, random_architecture,
                           _as_rng)
from .tasks import task_loss, task_metric, BOX_OUTPUTS
from .utils import (InvalidConfigurationError, NumericalError, PhaseOrderError,
                    PhaseWarning)

__all__ = ['SupernetWeights', 'PathNetwork', 'TrainingSchedule', 'instantiate_path',
           'train_supernet', 'train_standalone', 'fixed_path_sampler', 'evaluate_path',
           'SupernetEvaluator', 'PHASES', 'HEADS']

PHASES = ('initialized', 'pretrained', 'finetuned')

HEADS = ('classification', 'localization')

# the head each training phase attaches
PHASE_HEADS = {'pretrain': 'classification', 'finetune': 'localization'}


def _block_bundle_name(index, choice):
    return "block{0}.choice{1}".format(index, int(choice))


class SupernetWeights:
    """
    Shared parameter store of a supernet.

    Holds one `~backbone_nas.layers.ParameterBundle` for the stem, one per
    (block index, choice) pair and one per task head. Bundles of different
    choices never share storage; every path through the supernet binds
    the bundles of its choices.

    Parameters
    ----------
    space : `~backbone_nas.search_space.SearchSpaceSpec`
    num_classes : int
        Outputs of the classification head.
    phase : {'initialized', 'pretrained', 'finetuned'}
    step : int
        Iterations of the last completed training phase.
    seed : int
        Seed the weights were initialized from.
    rng : `numpy.random.Generator`, optional
        Draws the initial weights; without it every weight is zero.
    """

    read = UnifiedReadWriteMethod(SupernetWeightsRead)
    write = UnifiedReadWriteMethod(SupernetWeightsWrite)

    def __init__(self, space, num_classes=4, phase='initialized', step=0, seed=0,
                 rng=None):
        if phase not in PHASES:
            raise InvalidConfigurationError("Unknown phase {0!r}".format(phase))
        self.space = space
        self.num_classes = int(num_classes)
        self.phase = phase
        self.step = int(step)
        self.seed = int(seed)
        self.history = {}

        self.stem = init_parameters(ParameterBundle('stem'),
                                    stem_layout(space.stem_channels, pool=space.stem_pool),
                                    rng)
        self.blocks = {}
        for index, layouts in enumerate(space.block_layouts()):
            for choice in ChoiceKind:
                left, right = layouts[choice]
                bundle = ParameterBundle(_block_bundle_name(index, choice))
                init_parameters(bundle, (left or []) + right, rng)
                self.blocks[(index, choice)] = bundle

        self.heads = {
            'classification': init_linear(ParameterBundle('head.classification'), 'fc',
                                          space.final_channels, self.num_classes, rng),
            'localization': init_linear(ParameterBundle('head.localization'), 'fc',
                                        space.final_channels, BOX_OUTPUTS, rng),
        }

    @classmethod
    def initialize(cls, space, seed=0, num_classes=4):
        """
        Fresh supernet with weights drawn from ``seed``.
        """
        return cls(space, num_classes=num_classes, seed=seed,
                   rng=np.random.default_rng(seed))

    def bundles(self):
        """
        Every bundle in canonical order: stem, blocks by (index, choice),
        classification head, localization head.
        """
        return ([self.stem] +
                [self.blocks[key] for key in sorted(self.blocks)] +
                [self.heads[head] for head in HEADS])

    def block_bundle(self, index, choice):
        return self.blocks[(index, ChoiceKind(choice))]

    def named_tensors(self):
        for bundle in self.bundles():
            yield from bundle.named_tensors()

    def checksums(self):
        """
        Mapping of bundle name to a digest of its tensors.
        """
        return {bundle.name: bundle.checksum() for bundle in self.bundles()}

    @property
    def num_parameters(self):
        return sum(array.size for bundle in self.bundles()
                   for array in bundle.params.values())

    def load_tensors(self, tensors):
        """
        Overwrite every tensor from a name → array mapping. The names and
        shapes must match this supernet exactly.
        """
        expected = dict(self.named_tensors())
        missing = sorted(set(expected) - set(tensors))
        unexpected = sorted(set(tensors) - set(expected))
        if missing or unexpected:
            raise ValueError("Tensor names do not match the search space: missing "
                             "{0}, unexpected {1}".format(missing[:5], unexpected[:5]))
        for name, array in expected.items():
            value = tensors[name]
            if value.shape != array.shape:
                raise ValueError("Tensor {0} has shape {1}, expected {2}"
                                 .format(name, value.shape, array.shape))
            array[...] = value
        return self

    def copy(self):
        new = SupernetWeights(self.space, num_classes=self.num_classes,
                              phase=self.phase, step=self.step, seed=self.seed)
        return new.load_tensors(dict(self.named_tensors()))

    def __repr__(self):
        return ("<SupernetWeights space={0}, phase={1}, step={2}, {3} parameters>"
                .format(self.space.name, self.phase, self.step, self.num_parameters))


class PathNetwork:
    """
    One executable path through the supernet with a task head attached.

    Parameters and batch norm scale/shift are the supernet's own arrays.
    With ``private_statistics`` the batch norm running statistics are
    private copies, so recalibrating this instance leaves the supernet
    and every other instance untouched.
    """

    def __init__(self, weights, arch, head, private_statistics=True):
        if head not in HEADS:
            raise InvalidConfigurationError("Unknown head {0!r}; expected one of {1}"
                                            .format(head, HEADS))
        space = weights.space
        if not isinstance(arch, Architecture):
            arch = Architecture(tuple(arch))
        arch.validate(space)

        self.architecture = arch
        self.head_name = head
        self.stem = build_sequential(weights.stem,
                                     stem_layout(space.stem_channels, pool=space.stem_pool),
                                     private_statistics)
        self.blocks = []
        block_bundles = []
        for index, (choice, layouts) in enumerate(zip(arch, space.block_layouts())):
            bundle = weights.blocks[(index, choice)]
            left, right = layouts[choice]
            self.blocks.append(ChoiceBlock(
                None if left is None else build_sequential(bundle, left, private_statistics),
                build_sequential(bundle, right, private_statistics)))
            block_bundles.append(bundle)

        head_bundle = weights.heads[head]
        head_layers = [GlobalAvgPool(), Linear(head_bundle, 'fc')]
        if head == 'localization':
            head_layers.append(Sigmoid())
        self.head = Sequential(head_layers)

        self.bundles = [weights.stem] + block_bundles + [head_bundle]

    def forward(self, x, mode='eval'):
        x = self.stem.forward(x, mode)
        for block in self.blocks:
            x = block.forward(x, mode)
        return self.head.forward(x, mode)

    def backward(self, dout):
        dout = self.head.backward(dout)
        for block in reversed(self.blocks):
            dout = block.backward(dout)
        return self.stem.backward(dout)

    def batch_norms(self):
        norms = self.stem.batch_norms()
        for block in self.blocks:
            norms += block.batch_norms()
        return norms


def instantiate_path(weights, arch, head, private_statistics=True):
    """
    Build the network of ``arch`` from the shared bundles of ``weights``.

    Raises
    ------
    InvalidConfigurationError
        For an unknown head.
    InvalidArchitectureError
        When ``arch`` does not belong to the supernet's search space.
    """
    return PathNetwork(weights, arch, head, private_statistics=private_statistics)


@dataclass(frozen=True)
class TrainingSchedule:
    """
    Iterations, batch sizes and optimizer settings of the two training
    phases. Pretraining decays the learning rate linearly to zero;
    fine-tuning divides it by 10 at 2/3 and 8/9 of its iterations.
    """

    pretrain_iterations: int = 4000
    finetune_iterations: int = 2000
    pretrain_batch_size: int = 64
    finetune_batch_size: int = 64
    pretrain_learning_rate: float = 0.1
    finetune_learning_rate: float = 0.05
    pretrain_momentum: float = 0.9
    finetune_momentum: float = 0.9
    pretrain_weight_decay: float = 4e-5
    finetune_weight_decay: float = 1e-4

    def __post_init__(self):
        for phase in PHASE_HEADS:
            if self.iterations(phase) <= 0:
                raise InvalidConfigurationError("{0}_iterations must be positive, got "
                                                "{1}".format(phase, self.iterations(phase)))
            if self.batch_size(phase) <= 0:
                raise InvalidConfigurationError("{0}_batch_size must be positive"
                                                .format(phase))

    def iterations(self, phase):
        return getattr(self, phase + '_iterations')

    def batch_size(self, phase):
        return getattr(self, phase + '_batch_size')

    def sgd_config(self, phase):
        if phase == 'pretrain':
            return SgdConfig(learning_rate=self.pretrain_learning_rate, schedule='linear',
                             total_steps=self.pretrain_iterations,
                             momentum=self.pretrain_momentum,
                             weight_decay=self.pretrain_weight_decay)
        elif phase == 'finetune':
            return SgdConfig.step_decay(self.finetune_learning_rate,
                                        self.finetune_iterations,
                                        momentum=self.finetune_momentum,
                                        weight_decay=self.finetune_weight_decay)
        raise InvalidConfigurationError("Unknown phase {0!r}".format(phase))

    def from_scratch(self):
        """
        Schedule for fine-tuning without pretraining: twice the iterations.
        """
        return replace(self, finetune_iterations=2 * self.finetune_iterations)


def _check_phase_order(weights, phase, from_scratch):
    if phase == 'pretrain':
        if weights.phase != 'initialized':
            raise PhaseOrderError("Pretraining needs freshly initialized weights, got "
                                  "weights tagged {0!r}".format(weights.phase))
    elif phase == 'finetune':
        allowed = ('pretrained', 'initialized') if from_scratch else ('pretrained',)
        if weights.phase not in allowed:
            raise PhaseOrderError("Fine-tuning needs pretrained weights, got weights "
                                  "tagged {0!r}".format(weights.phase))
    else:
        raise InvalidConfigurationError("Unknown phase {0!r}; expected 'pretrain' or "
                                        "'finetune'".format(phase))


def train_supernet(space, weights, schedule, phase, task, data, rng=None, sampler=None,
                   from_scratch=False, progressbar=None):
    """
    Train the supernet one sampled path per iteration.

    Every iteration draws an architecture (uniformly unless ``sampler`` is
    given), binds it to the shared bundles with the phase's head and runs
    one forward/backward/SGD step on one minibatch. Only the stem, the
    head and the bundles on the sampled path receive updates.

    Parameters
    ----------
    space : `~backbone_nas.search_space.SearchSpaceSpec`
    weights : `SupernetWeights`
        Updated in place and returned.
    schedule : `TrainingSchedule`
    phase : {'pretrain', 'finetune'}
    task : `~backbone_nas.tasks.TaskSpec`
        Must be the classification task for pretraining and the
        localization task for fine-tuning.
    data : `~backbone_nas.tasks.DatasetSplit`
        Training items.
    rng : int or `numpy.random.Generator`
        Drives path sampling and minibatch selection.
    sampler : callable, optional
        ``sampler(rng) -> Architecture``.
    from_scratch : bool
        Allow fine-tuning weights that were never pretrained.
    progressbar : bool, optional
        Defaults to ``conf.show_progress``.

    Raises
    ------
    PhaseOrderError
        When the weights' phase tag does not allow ``phase``.
    NumericalError
        On non-finite values, naming the iteration and the sampled path.
    """
    from . import conf

    _check_phase_order(weights, phase, from_scratch)
    if weights.space != space:
        raise InvalidConfigurationError("The weights were built for {0}, not {1}"
                                        .format(weights.space, space))
    head = PHASE_HEADS[phase]
    if task.head != head:
        raise InvalidConfigurationError("Phase {0} trains the {1} head, got a {2} task"
                                        .format(phase, head, task.kind))
    if len(data) == 0:
        raise ValueError("Cannot train on an empty split")

    rng = _as_rng(rng)
    sampler = sampler or (lambda generator: random_architecture(space, generator))
    config = schedule.sgd_config(phase)
    iterations = schedule.iterations(phase)
    batch_size = schedule.batch_size(phase)
    if progressbar is None:
        progressbar = conf.show_progress

    log.info("Starting {0} of {1} for {2} iterations (batch {3}, {4})"
             .format(phase, space.name, iterations, batch_size, task.kind))

    if progressbar:
        progressbar = ProgressBar(iterations)
        pbu = progressbar.update
    else:
        pbu = lambda: True

    losses = np.zeros(iterations, dtype=np.float64)
    for iteration in range(iterations):
        arch = sampler(rng)
        picks = rng.choice(len(data), size=batch_size, replace=batch_size > len(data))
        images, labels = data.images[picks], data.labels[picks]

        network = PathNetwork(weights, arch, head, private_statistics=False)
        try:
            output = network.forward(images, mode='train')
            loss, grad = task_loss(output, labels, task)
            if not np.isfinite(loss):
                raise NumericalError("non-finite loss {0}".format(loss))
            network.backward(grad)
        except NumericalError as ex:
            raise NumericalError("{0} diverged at iteration {1} on path {2}: {3}"
                                 .format(phase, iteration, arch, ex),
                                 iteration=iteration, architecture=arch) from ex

        sgd_update_bundles(network.bundles, config, iteration)
        losses[iteration] = loss

        if (iteration + 1) % conf.log_interval == 0:
            log.info("{0} iteration {1}/{2}: loss {3:.4f}, lr {4:.5f}"
                     .format(phase, iteration + 1, iterations, loss,
                             config.lr_at(iteration)))
        log.debug("{0} iteration {1}: path {2}, loss {3:.6f}"
                  .format(phase, iteration, arch, loss))
        pbu()

    weights.phase = 'pretrained' if phase == 'pretrain' else 'finetuned'
    weights.step = iterations
    weights.history[phase] = losses
    return weights


def fixed_path_sampler(arch):
    """
    Sampler that always returns ``arch`` (stand-alone training).
    """
    return lambda rng: arch


def train_standalone(space, arch, schedule, pretrain_task, pretrain_data,
                     finetune_task, finetune_data, seed=0, progressbar=None):
    """
    Train a single architecture on its own through both phases.

    Returns
    -------
    weights : `SupernetWeights`
        Only the bundles of ``arch`` (plus stem and heads) are trained.
    """
    arch = Architecture(tuple(arch)).validate(space)
    weights = SupernetWeights.initialize(space, seed=seed,
                                         num_classes=pretrain_task.num_classes)
    rng = np.random.default_rng(seed)
    sampler = fixed_path_sampler(arch)
    train_supernet(space, weights, schedule, 'pretrain', pretrain_task, pretrain_data,
                   rng=rng, sampler=sampler, progressbar=progressbar)
    train_supernet(space, weights, schedule, 'finetune', finetune_task, finetune_data,
                   rng=rng, sampler=sampler, progressbar=progressbar)
    return weights


def _check_evaluation_phase(weights, task):
    required = 'finetuned' if task.kind == 'localization' else 'pretrained'
    if PHASES.index(weights.phase) < PHASES.index(required):
        warnings.warn("Evaluating a {0} task on weights tagged {1!r}; fitness is only "
                      "meaningful on {2} weights".format(task.kind, weights.phase,
                                                         required), PhaseWarning)


def evaluate_path(weights, arch, task, calibration_set, validation_set, calibrate=True,
                  batch_size=None):
    """
    Fitness of one path with inherited weights.

    The path gets private batch norm statistics recomputed on
    ``calibration_set``; the task metric is then computed on
    ``validation_set`` in evaluation mode. No supernet array is modified.

    Parameters
    ----------
    weights : `SupernetWeights`
    arch : `~backbone_nas.search_space.Architecture`
    task : `~backbone_nas.tasks.TaskSpec`
    calibration_set, validation_set : `~backbone_nas.tasks.DatasetSplit`
    calibrate : bool
        Skip recalibration (the path then uses the supernet's running
        statistics).
    batch_size : int, optional
        Defaults to ``conf.evaluation_batch_size``.

    Returns
    -------
    fitness : float
        Top-1 accuracy or mean IoU, in [0, 1].
    """
    from . import conf

    if len(validation_set) == 0:
        raise ValueError("Cannot evaluate on an empty validation set")
    _check_evaluation_phase(weights, task)

    network = PathNetwork(weights, arch, task.head, private_statistics=True)
    if calibrate:
        recompute_bn_statistics(network,
                                calibration_set.batches(conf.calibration_batch_size))
    return task_metric(network, validation_set, task, batch_size=batch_size)


class SupernetEvaluator:
    """
    Fitness function ``arch -> float`` over a frozen supernet, suitable for
    `~backbone_nas.evolution.run_search` and for joblib workers.
    """

    def __init__(self, weights, task, calibration_set, validation_set):
        self.weights = weights
        self.task = task
        self.calibration_set = calibration_set
        self.validation_set = validation_set

    def __call__(self, arch):
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', PhaseWarning)
            return evaluate_path(self.weights, arch, self.task, self.calibration_set,
                                 self.validation_set)

    def check(self):
        _check_evaluation_phase(self.weights, self.task)
        return self
