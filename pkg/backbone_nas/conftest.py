# this contains imports plugins that configure py.test for astropy tests.
# by importing them here in conftest.py they are discoverable by py.test
# no matter how it is invoked within the source tree.

import numpy as np
import pytest

from pytest_astropy_header.display import PYTEST_HEADER_MODULES

from .search_space import SearchSpaceSpec
from .supernet import SupernetWeights, TrainingSchedule, train_supernet
from .tasks import TaskSpec, build_task_data


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False,
                     help="run the long acceptance tests")


def pytest_configure(config):

    config.option.astropy_header = True
    config.addinivalue_line('markers', 'slow: long acceptance test, needs --run-slow')

    PYTEST_HEADER_MODULES['Astropy'] = 'astropy'
    PYTEST_HEADER_MODULES['scipy'] = 'scipy'
    PYTEST_HEADER_MODULES['joblib'] = 'joblib'


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_space():
    # two stride-2 blocks: 16x16 inputs end at 2x2
    return SearchSpaceSpec(8, ((8, 1), (16, 1)), input_resolution=(16, 16), name='tiny')


@pytest.fixture
def stride_one_space():
    # exercises the channel split of stride-1 blocks
    return SearchSpaceSpec(8, ((8, 2), (16, 1)), input_resolution=(16, 16),
                           name='tiny-split')


@pytest.fixture
def classification_task():
    return TaskSpec('classification', resolution=(16, 16), num_classes=3, noise=0.3)


@pytest.fixture
def localization_task():
    return TaskSpec('localization', resolution=(16, 16), noise=0.1)


@pytest.fixture
def classification_data(classification_task):
    return build_task_data(classification_task, 0, sizes=(48, 24, 24),
                           calibration_size=16)


@pytest.fixture
def localization_data(localization_task):
    return build_task_data(localization_task, 1, sizes=(48, 24, 24),
                           calibration_size=16)


@pytest.fixture
def tiny_schedule():
    return TrainingSchedule(pretrain_iterations=4, finetune_iterations=3,
                            pretrain_batch_size=8, finetune_batch_size=8)


@pytest.fixture
def pretrained_weights(tiny_space, tiny_schedule, classification_task,
                       classification_data):
    weights = SupernetWeights.initialize(tiny_space, seed=0,
                                         num_classes=classification_task.num_classes)
    return train_supernet(tiny_space, weights, tiny_schedule, 'pretrain',
                          classification_task, classification_data.train, rng=3)


@pytest.fixture
def finetuned_weights(pretrained_weights, tiny_space, tiny_schedule, localization_task,
                      localization_data):
    return train_supernet(tiny_space, pretrained_weights, tiny_schedule, 'finetune',
                          localization_task, localization_data.train, rng=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
