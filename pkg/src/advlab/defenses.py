"""Training-time and reactive defenses.

Label smoothing, adversarial training, defensive distillation, and a
separate detector network that flags adversarial inputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackConfig, AttackMethod, attack_batch, pick_random_target
from .datasets import Dataset
from .network import (LayerSpec, Network, TrainConfig, desk_layers, fit, init_network,
                      predict, probs_batch, train_sgd)


def smooth_labels(y: int, class_count: int, s: float) -> np.ndarray:
    """Target distribution with ``1 - s`` on ``y`` and ``s / (K - 1)`` elsewhere."""
    if not 0 <= s < 1:
        raise ValueError("smoothing must lie in [0, 1)")
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if not 0 <= y < class_count:
        raise ValueError(f"label {y} out of range")
    v = np.full(class_count, s / (class_count - 1))
    v[y] = 1.0 - s
    return v


def smooth_label_matrix(labels, class_count: int, s: float) -> np.ndarray:
    """Row-wise `smooth_labels` for an array of labels."""
    if not 0 <= s < 1:
        raise ValueError("smoothing must lie in [0, 1)")
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full((len(labels), class_count), s / (class_count - 1))
    out[np.arange(len(labels)), labels] = 1.0 - s
    return out


# ---------------------------------------------------------------------------
# adversarial training

@dataclass
class AdvTrainConfig:
    base: TrainConfig
    attack: AttackConfig
    mix_ratio: float = 0.5

    def __post_init__(self):
        if not 0 <= self.mix_ratio <= 1:
            raise ValueError("mix_ratio must lie in [0, 1]")


def adversarial_train(init: Network, data: Dataset, cfg: AdvTrainConfig):
    """Train with part of every batch swapped for adversarial versions.

    The first ``round(mix_ratio * batch)`` examples of each shuffled batch
    are attacked against the parameters as they stand at that step; their
    labels are kept. Returns ``(network, history)`` like `train_sgd`.
    """
    if cfg.mix_ratio == 0:
        return train_sgd(init, data, cfg.base)

    attack = cfg.attack
    # a separate stream so random targets never disturb the shuffling order
    target_rng = np.random.default_rng([cfg.base.seed, 1])

    def hook(net, xb, yb, _targets):
        m = int(round(cfg.mix_ratio * len(xb)))
        if m == 0:
            return xb
        targets = None
        if attack.method is AttackMethod.ITERATIVE_TARGETED:
            if isinstance(attack.target, int):
                targets = [attack.target] * m
            else:
                targets = [pick_random_target(target_rng, net.class_count, int(y))
                           for y in yb[:m]]
        xb = xb.copy()
        xb[:m] = attack_batch(net, xb[:m], yb[:m], attack, targets)
        return xb

    if data.class_count != init.class_count:
        raise ValueError("dataset and network disagree on class_count")
    targets = smooth_label_matrix(data.labels, init.class_count, cfg.base.label_smoothing)
    return fit(init, data.images, data.labels, targets, cfg.base, batch_hook=hook)


# ---------------------------------------------------------------------------
# distillation

@dataclass
class DistillConfig:
    teacher_train: TrainConfig
    student_layers: list[LayerSpec]
    temperature: float = 20.0
    teacher_layers: list[LayerSpec] | None = None
    student_train: TrainConfig | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class DistillResult:
    teacher: Network
    student: Network
    teacher_history: list = field(default_factory=list)
    student_history: list = field(default_factory=list)


def soft_labels(teacher: Network, images: np.ndarray, temperature: float,
                batch_size: int = 256) -> np.ndarray:
    chunks = [probs_batch(teacher, images[i:i + batch_size], temperature)
              for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks)


def distill(data: Dataset, cfg: DistillConfig, seed: int = 0) -> DistillResult:
    """Train a teacher on hard labels, then a smaller student on its softened outputs.

    The student is trained at ``cfg.temperature`` against the teacher's
    probabilities at the same temperature, with the loss scaled by T^2 so
    the soft targets keep their weight as T grows. Because the scaled
    gradients are about T times larger than hard-label ones while the
    student's logits are small, a student config left unset reuses the
    teacher's with the learning rate divided by T. The returned student is
    used at temperature 1.
    """
    teacher_layers = cfg.teacher_layers or desk_layers(data.class_count)
    rng = np.random.SeedSequence(seed)
    t_seed, s_seed = (int(s.generate_state(1)[0]) for s in rng.spawn(2))
    teacher0 = init_network(teacher_layers, data.image_shape, data.class_count, t_seed)
    student0 = init_network(cfg.student_layers, data.image_shape, data.class_count, s_seed)
    if not student0.parameter_count() < teacher0.parameter_count():
        raise ValueError(f"student has {student0.parameter_count()} parameters, teacher "
                         f"{teacher0.parameter_count()}; the student must be smaller")
    teacher, t_hist = train_sgd(teacher0, data, cfg.teacher_train)
    soft = soft_labels(teacher, data.images, cfg.temperature)
    t = cfg.temperature
    student_cfg = cfg.student_train or replace(
        cfg.teacher_train, learning_rate=cfg.teacher_train.learning_rate / t)
    student, s_hist = fit(student0, data.images, data.labels, soft, student_cfg,
                          temperature=t, loss_scale=t * t)
    return DistillResult(teacher, student, t_hist, s_hist)


# ---------------------------------------------------------------------------
# detector

CLEAN, ADVERSARIAL = 0, 1


@dataclass
class Detector:
    network: Network
    holdout_accuracy: float
    false_flag_rate: float
    train_indices: np.ndarray
    holdout_indices: np.ndarray

    def scores(self, images: np.ndarray) -> np.ndarray:
        """Probability that each image is adversarial."""
        return probs_batch(self.network, images)[:, ADVERSARIAL]

    def verdicts(self, images: np.ndarray) -> np.ndarray:
        return predict(self.network, images)


def train_detector(clean: Dataset, adversarial: Dataset, arch: Sequence[LayerSpec],
                   cfg: TrainConfig, holdout_fraction: float = 0.25) -> Detector:
    """Fit a binary clean (0) / adversarial (1) classifier on raw images.

    Pairs are split by index before training: pair ``i`` (clean image ``i``
    and adversarial image ``i``) lands entirely in either the training or the
    held-out part, so no image's adversarial twin leaks across the split.
    """
    if len(clean) != len(adversarial):
        raise ValueError(f"unbalanced detector data: {len(clean)} clean vs "
                         f"{len(adversarial)} adversarial")
    if clean.image_shape != adversarial.image_shape:
        raise ValueError("clean and adversarial images differ in shape")
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    n = len(clean)
    n_hold = max(1, int(round(holdout_fraction * n)))
    if n_hold >= n:
        raise ValueError("not enough pairs to hold some out")
    perm = np.random.default_rng(cfg.seed).permutation(n)
    hold_idx, train_idx = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    assert not set(hold_idx) & set(train_idx)

    def stacked(idx):
        x = np.concatenate([clean.images[idx], adversarial.images[idx]])
        y = np.concatenate([np.full(len(idx), CLEAN), np.full(len(idx), ADVERSARIAL)])
        return Dataset(x, y, 2)

    train_set, hold_set = stacked(train_idx), stacked(hold_idx)
    net0 = init_network(arch, clean.image_shape, 2, cfg.seed)
    net, _ = train_sgd(net0, train_set, cfg)
    preds = predict(net, hold_set.images)
    acc = float(np.mean(preds == hold_set.labels))
    clean_mask = hold_set.labels == CLEAN
    false_flag = float(np.mean(preds[clean_mask] == ADVERSARIAL))
    return Detector(net, acc, false_flag, train_idx, hold_idx)


def write_verdicts_csv(detector: Detector, images: np.ndarray, destination,
                       image_ids: Sequence | None = None) -> int:
    """CSV of (image_id, score, verdict); returns the number of bytes written."""
    scores = detector.scores(images)
    verdicts = detector.verdicts(images)
    ids = list(image_ids) if image_ids is not None else list(range(len(images)))
    lines = ["image_id,score,verdict"]
    for i, s, v in zip(ids, scores, verdicts):
        lines.append(f"{i},{s:.6f},{'adversarial' if v == ADVERSARIAL else 'clean'}")
    data = ("\n".join(lines) + "\n").encode()
    Path(destination).write_bytes(data)
    return len(data)


def read_verdicts_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
