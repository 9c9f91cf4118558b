import pytest

from finequeue import QueueConfig
from finequeue.learner.network import init_policy
from finequeue.learner.ppo import Hyperparams


@pytest.fixture
def config():
    return QueueConfig()


@pytest.fixture
def small_config():
    return QueueConfig(x0=8, x=4, w=8)


@pytest.fixture
def one_sorting():
    return QueueConfig(T=1, w=1, x=0, x0=8)


@pytest.fixture
def policy(small_config):
    return init_policy(small_config)


@pytest.fixture
def tiny_hyper():
    return Hyperparams(n_epochs=2, buffer_size=64, n_train=4)
