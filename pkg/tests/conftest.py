import time

import numpy as np
import pytest

from advlab import desk
from advlab.attacks import AttackConfig, AttackMethod
from advlab.defenses import AdvTrainConfig, adversarial_train
from advlab.network import (conv2d, dense, flatten, init_network, maxpool2x2, relu)

from helpers import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class Timed:
    def __init__(self, value, seconds):
        self.value = value
        self.seconds = seconds


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return Timed(out, time.perf_counter() - start)


@pytest.fixture(scope="session")
def corpus():
    """(train, test) splits of the synthetic desk corpus."""
    return desk.desk_corpus()


@pytest.fixture(scope="session")
def desk_run(corpus):
    train, _ = corpus
    return _timed(desk.train_desk_model, train, 0)


@pytest.fixture(scope="session")
def desk_net(desk_run):
    return desk_run.value[0]


@pytest.fixture(scope="session")
def desk_run_b(corpus):
    """A second desk model that differs only in its seed."""
    train, _ = corpus
    return _timed(desk.train_desk_model, train, 1)


@pytest.fixture(scope="session")
def adv_run(corpus):
    train, _ = corpus
    cfg = AdvTrainConfig(desk.desk_train_config(0),
                         AttackConfig(AttackMethod.FAST_GRADIENT_SIGN, 0.1), mix_ratio=0.5)
    return _timed(adversarial_train, desk.desk_model(0), train, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net():
    """A few-hundred-parameter net exercising every layer kind, incl. stride and odd pooling."""
    layers = [conv2d(3, 3, 1), relu(), maxpool2x2(), conv2d(4, 2, 2), relu(),
              flatten(), dense(5)]
    return init_network(layers, (11, 9, 2), 5, seed=7)


@pytest.fixture
def small_batch(rng):
    return rng.uniform(0, 1, size=(6, 11, 9, 2)), rng.integers(0, 5, size=6)
