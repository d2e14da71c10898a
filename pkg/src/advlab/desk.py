"""The standard desk-scale setup: synthetic corpus, reference model, training schedule.

Tests, demos and the CLI defaults all use these so results line up.
"""
from __future__ import annotations

from .datasets import Dataset, generate_synthetic
from .network import Network, TrainConfig, desk_layers, init_network, train_sgd

IMAGE_SIZE = 28
CLASS_COUNT = 10
TRAIN_SIZE = 3000
TEST_SIZE = 1000
TRAIN_SEED = 1
TEST_SEED = 2


def desk_corpus(train_seed: int = TRAIN_SEED, test_seed: int = TEST_SEED,
                train_size: int = TRAIN_SIZE, test_size: int = TEST_SIZE
                ) -> tuple[Dataset, Dataset]:
    """(train, test) synthetic splits generated from independent seeds."""
    train = generate_synthetic(train_size, IMAGE_SIZE, CLASS_COUNT, train_seed)
    test = generate_synthetic(test_size, IMAGE_SIZE, CLASS_COUNT, test_seed)
    return train, test


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    params = dict(learning_rate=0.1, epochs=60, batch_size=32, seed=seed)
    params.update(overrides)
    return TrainConfig(**params)


def desk_model(seed: int = 0, input_shape=(IMAGE_SIZE, IMAGE_SIZE, 1),
               class_count: int = CLASS_COUNT) -> Network:
    """Untrained reference network initialised from ``seed``."""
    return init_network(desk_layers(class_count), input_shape, class_count, seed)


def train_desk_model(train: Dataset, seed: int = 0, **overrides):
    """Initialise and train the reference network; returns ``(net, history)``."""
    net = desk_model(seed, train.image_shape, train.class_count)
    return train_sgd(net, train, desk_train_config(seed, **overrides))
