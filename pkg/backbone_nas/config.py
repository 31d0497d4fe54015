"""
Run configuration: a flat ``key = value`` file with dotted section
prefixes (``evolution.population_size = 50``), read and written with
astropy's bundled configobj.

Every run derives all of its random streams from ``seed``, so a written
configuration reproduces the run.
"""

import math
import os
from collections import namedtuple

import numpy as np

from astropy import log
from astropy.extern.configobj import configobj

from .evolution import EvolutionConfig, CONTROLLERS
from .flops import Constraint
from .search_space import get_space
from .supernet import TrainingSchedule
from .tasks import TaskSpec, build_task_data, TASK_KINDS
from .utils import InvalidConfigurationError

__all__ = ['RunConfig', 'FIELDS', 'SEED_ENVIRONMENT_VARIABLE', 'STREAMS']

SEED_ENVIRONMENT_VARIABLE = 'DETNAS_SEED'

Field = namedtuple('Field', ['kind', 'default', 'description'])

FIELDS = {
    'seed': Field(int, 0, "seed every random stream of the run derives from"),
    'output_dir': Field(str, '.', "directory receiving checkpoints, logs and reports"),
    'space.preset': Field(str, 'desk', "search space preset name or custom space file"),
    'space.width_multiplier': Field(float, 1.0, "channel multiplier applied to the space"),
    'space.input_resolution': Field('ints', (224, 224), "FLOPs reporting resolution"),
    'task.resolution': Field('ints', (32, 32), "image size of both synthetic tasks"),
    'task.num_classes': Field(int, 4, "classes of the pretraining task"),
    'task.classification_noise': Field(float, 0.5, "pixel noise of the classification task"),
    'task.localization_noise': Field(float, 0.2, "pixel noise of the localization task"),
    'task.classification_sizes': Field('ints', (8000, 1000, 1000),
                                       "train, validation, test items (classification)"),
    'task.localization_sizes': Field('ints', (6000, 1000, 1000),
                                     "train, validation, test items (localization)"),
    'task.calibration_size': Field(int, 500, "batch norm calibration items"),
    'pretrain.iterations': Field(int, 4000, "pretraining iterations"),
    'pretrain.batch_size': Field(int, 64, "pretraining minibatch size"),
    'pretrain.learning_rate': Field(float, 0.1, "initial pretraining learning rate"),
    'pretrain.momentum': Field(float, 0.9, "pretraining SGD momentum"),
    'pretrain.weight_decay': Field(float, 4e-5, "pretraining weight decay"),
    'finetune.iterations': Field(int, 2000, "fine-tuning iterations"),
    'finetune.batch_size': Field(int, 64, "fine-tuning minibatch size"),
    'finetune.learning_rate': Field(float, 0.05, "initial fine-tuning learning rate"),
    'finetune.momentum': Field(float, 0.9, "fine-tuning SGD momentum"),
    'finetune.weight_decay': Field(float, 1e-4, "fine-tuning weight decay"),
    'evolution.population_size': Field(int, 50, "individuals per generation"),
    'evolution.parent_size': Field(int, 10, "parents selected per generation"),
    'evolution.iterations': Field(int, 20, "generations"),
    'evolution.mutation_probability': Field(float, 0.1, "per-position mutation rate"),
    'evolution.max_flops': Field(float, math.inf, "FLOPs (MACs) budget at the reporting "
                                                  "resolution"),
    'evolution.max_resample_attempts': Field(int, 1000, "draws per individual before "
                                                        "giving up on the budget"),
    'search.controller': Field(str, 'evolution', "evolution, random or both"),
    'search.task': Field(str, 'localization', "task whose validation metric is the "
                                              "fitness"),
    'search.num_cores': Field(int, 1, "joblib workers for candidate evaluation"),
}

# independent random streams derived from the run seed
STREAMS = {'classification_data': 1, 'localization_data': 2, 'pretrain': 3,
           'finetune': 4, 'search': 5, 'flops_sampling': 6}


def _parse(key, raw):
    kind = FIELDS[key].kind
    if isinstance(raw, (list, tuple)) and kind != 'ints':
        raw = ",".join(str(item) for item in raw)
    try:
        if kind == 'ints':
            if isinstance(raw, str):
                raw = [item for item in raw.split(',') if item.strip()]
            elif np.isscalar(raw):
                raw = [raw]
            values = tuple(int(str(item).strip()) for item in raw)
            if key.endswith('resolution') and len(values) == 1:
                values = values * 2
            return values
        elif kind is int:
            return int(str(raw).strip())
        elif kind is float:
            return float(str(raw).strip())
        return str(raw).strip()
    except ValueError:
        raise InvalidConfigurationError("Invalid value {0!r} for {1}".format(raw, key))


def _format(key, value):
    kind = FIELDS[key].kind
    if kind == 'ints':
        return ", ".join(str(v) for v in value)
    elif kind is float:
        return repr(float(value))
    return str(value)


class RunConfig:
    """
    Every setting of a pipeline run.

    Values are accessed by their dotted key (``config['evolution.iterations']``);
    the builder methods turn them into the objects the pipeline consumes.
    """

    def __init__(self, values=None):
        self._values = {key: field.default for key, field in FIELDS.items()}
        for key, value in (values or {}).items():
            self[key] = value

    def __getitem__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise InvalidConfigurationError("Unknown configuration key {0!r}".format(key))

    def __setitem__(self, key, value):
        if key not in FIELDS:
            raise InvalidConfigurationError("Unknown configuration key {0!r}".format(key))
        self._values[key] = _parse(key, value)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def to_dict(self):
        return dict(self._values)

    def copy(self):
        return RunConfig(self._values)

    @classmethod
    def read(cls, filename):
        """
        Read a configuration file; keys not present keep their defaults.
        """
        try:
            cfg = configobj.ConfigObj(str(filename), file_error=True)
        except (IOError, configobj.ConfigObjError) as ex:
            raise InvalidConfigurationError("Could not read configuration {0}: {1}"
                                            .format(filename, ex))
        config = cls()
        for key, value in cfg.items():
            if isinstance(value, dict):
                raise InvalidConfigurationError("Sections are not supported; write "
                                                "{0}.<key> = value instead".format(key))
            config[key] = value
        return config

    def write(self, filename):
        """
        Write every key, defaults included, so the file alone reproduces
        the run.
        """
        cfg = configobj.ConfigObj()
        cfg.filename = str(filename)
        cfg.initial_comment = ["backbone-nas run configuration"]
        for key in FIELDS:
            cfg[key] = _format(key, self._values[key])
        cfg.write()

    def set_override(self, assignment):
        """
        Apply one ``key=value`` command-line override.
        """
        if '=' not in assignment:
            raise InvalidConfigurationError("Override {0!r} is not of the form key=value"
                                            .format(assignment))
        key, value = assignment.split('=', 1)
        self[key.strip()] = value
        return self

    def apply_environment(self, environ=None):
        environ = os.environ if environ is None else environ
        if SEED_ENVIRONMENT_VARIABLE in environ:
            self['seed'] = environ[SEED_ENVIRONMENT_VARIABLE]
            log.info("Seed overridden by {0}: {1}".format(SEED_ENVIRONMENT_VARIABLE,
                                                          self['seed']))
        return self

    def validate(self):
        """
        Build every derived object once so that a bad value fails before
        any work starts.

        Raises
        ------
        InvalidConfigurationError
        """
        if self['seed'] < 0:
            raise InvalidConfigurationError("seed must be non-negative")
        for phase in ('pretrain', 'finetune'):
            if self[phase + '.iterations'] <= 0:
                raise InvalidConfigurationError("{0}.iterations must be positive, got {1}"
                                                .format(phase, self[phase + '.iterations']))
        for key in ('task.classification_sizes', 'task.localization_sizes'):
            if len(self[key]) != 3 or min(self[key]) <= 0:
                raise InvalidConfigurationError("{0} must be three positive counts"
                                                .format(key))
        if self['task.calibration_size'] <= 0:
            raise InvalidConfigurationError("task.calibration_size must be positive")
        if self['search.controller'] not in CONTROLLERS + ('both',):
            raise InvalidConfigurationError("search.controller must be evolution, random "
                                            "or both, got {0!r}"
                                            .format(self['search.controller']))
        if self['search.task'] not in TASK_KINDS:
            raise InvalidConfigurationError("search.task must be one of {0}"
                                            .format(TASK_KINDS))
        self.space()
        self.classification_task()
        self.localization_task()
        self.schedule()
        self.evolution_config()
        return self

    def rng(self, stream):
        """
        Generator of one named random stream of this run.
        """
        return np.random.default_rng([self['seed'], STREAMS[stream]])

    def space(self):
        space = get_space(self['space.preset'])
        if self['space.width_multiplier'] != 1:
            space = space.scaled(self['space.width_multiplier'])
        return space.with_resolution(self['space.input_resolution'])

    def classification_task(self):
        return TaskSpec('classification', resolution=self['task.resolution'],
                        num_classes=self['task.num_classes'],
                        noise=self['task.classification_noise'])

    def localization_task(self):
        return TaskSpec('localization', resolution=self['task.resolution'],
                        noise=self['task.localization_noise'])

    def search_task(self):
        if self['search.task'] == 'classification':
            return self.classification_task()
        return self.localization_task()

    def task_data(self, kind):
        """
        All splits of the ``'classification'`` or ``'localization'`` task.
        """
        if kind == 'classification':
            spec, stream = self.classification_task(), 'classification_data'
        else:
            spec, stream = self.localization_task(), 'localization_data'
        return build_task_data(spec, [self['seed'], STREAMS[stream]],
                               sizes=self['task.{0}_sizes'.format(kind)],
                               calibration_size=self['task.calibration_size'])

    def schedule(self):
        return TrainingSchedule(
            pretrain_iterations=self['pretrain.iterations'],
            finetune_iterations=self['finetune.iterations'],
            pretrain_batch_size=self['pretrain.batch_size'],
            finetune_batch_size=self['finetune.batch_size'],
            pretrain_learning_rate=self['pretrain.learning_rate'],
            finetune_learning_rate=self['finetune.learning_rate'],
            pretrain_momentum=self['pretrain.momentum'],
            finetune_momentum=self['finetune.momentum'],
            pretrain_weight_decay=self['pretrain.weight_decay'],
            finetune_weight_decay=self['finetune.weight_decay'])

    def constraint(self):
        return Constraint(self['evolution.max_flops'])

    def evolution_config(self):
        return EvolutionConfig(
            population_size=self['evolution.population_size'],
            parent_size=self['evolution.parent_size'],
            iterations=self['evolution.iterations'],
            mutation_probability=self['evolution.mutation_probability'],
            constraint=self.constraint(),
            max_resample_attempts=self['evolution.max_resample_attempts'])

    def __repr__(self):
        return "<RunConfig seed={0}, space={1}>".format(self['seed'], self['space.preset'])
