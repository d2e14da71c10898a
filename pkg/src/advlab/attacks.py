"""Gradient-sign adversarial example generators.

Three full-knowledge attacks share one projection step, `epsilon_clamp`:

* ``fast_gradient_sign``: one step of size epsilon along the sign of the
  input gradient of the true-class cost.
* ``iterative_nontargeted``: repeated steps of size alpha up the true-class
  cost, projected back into the epsilon ball after each step.
* ``iterative_targeted``: repeated steps of size alpha *down* the cost of a
  chosen target class, i.e. increasing log p(target | x).

Pixel values and all budgets are in [0, 1] units.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import LabeledImage, to_u8
from .network import Network, input_gradient_batch, probs_batch
from .tensor_core import DTYPE, box_clamp, sign

DEFAULT_ALPHA = 1.0 / 255.0
DEFAULT_ITERATIONS = 10


class AttackMethod(str, enum.Enum):
    FAST_GRADIENT_SIGN = "fast_gradient_sign"
    ITERATIVE_NONTARGETED = "iterative_nontargeted"
    ITERATIVE_TARGETED = "iterative_targeted"


ALL_METHODS = tuple(AttackMethod)


@dataclass(frozen=True)
class RandomTarget:
    """Pick a uniformly random wrong class, seeded."""
    seed: int


@dataclass(frozen=True)
class AttackConfig:
    method: AttackMethod
    epsilon: float
    alpha: float = DEFAULT_ALPHA
    iterations: int = DEFAULT_ITERATIONS
    target: int | RandomTarget | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", AttackMethod(self.method))
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.method is AttackMethod.ITERATIVE_TARGETED and self.target is None:
            raise ValueError("iterative_targeted needs a target (class index or RandomTarget)")


@dataclass
class AttackOutcome:
    original: LabeledImage
    adversarial: np.ndarray
    clean_probs: np.ndarray
    adv_probs: np.ndarray
    target: int | None
    linf_norm: float
    iterations_run: int
    success_flipped_top1: bool
    success_hit_target: bool | None


def epsilon_clamp(candidate, original, epsilon: float) -> np.ndarray:
    """Clip ``candidate`` into the epsilon ball around ``original``, within [0, 1]."""
    candidate = np.asarray(candidate, dtype=DTYPE)
    original = np.asarray(original, dtype=DTYPE)
    if candidate.shape != original.shape:
        raise ValueError(f"candidate shape {candidate.shape} != original shape "
                         f"{original.shape}")
    if not epsilon >= 0:
        raise ValueError("epsilon must be non-negative")
    lo = np.maximum(0.0, original - epsilon)
    hi = np.minimum(1.0, original + epsilon)
    return box_clamp(candidate, lo, hi)


def pick_random_target(seed, class_count: int, y_true: int) -> int:
    """Uniform draw over every class except ``y_true``.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is advanced).
    """
    if class_count < 2:
        raise ValueError("need at least two classes to pick a target")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = int(rng.integers(0, class_count - 1))
    return r + 1 if r >= y_true else r


def resolve_target(target, class_count: int, y_true: int) -> int | None:
    if target is None:
        return None
    if isinstance(target, RandomTarget):
        return pick_random_target(target.seed, class_count, y_true)
    target = int(target)
    if not 0 <= target < class_count:
        raise ValueError(f"target class {target} out of range")
    return target


# ---------------------------------------------------------------------------
# batched generators; these are what the public functions and the
# evaluation/defense code call

def fgsm_batch(net: Network, images, labels, epsilon: float) -> np.ndarray:
    images = np.asarray(images, dtype=DTYPE)
    _, grad = input_gradient_batch(net, images, labels)
    return box_clamp(images + epsilon * sign(grad), 0.0, 1.0)


def iterative_batch(net: Network, images, classes, epsilon: float, alpha: float,
                    iterations: int, targeted: bool) -> np.ndarray:
    """Projected sign-gradient iterations.

    Non-targeted steps ascend the cost of ``classes`` (the true labels);
    targeted steps descend the cost of ``classes`` (the targets).
    """
    images = np.asarray(images, dtype=DTYPE)
    step = -alpha if targeted else alpha
    adv = images.copy()
    for _ in range(iterations):
        _, grad = input_gradient_batch(net, adv, classes)
        adv = epsilon_clamp(adv + step * sign(grad), images, epsilon)
    return adv


def attack_batch(net: Network, images, labels, cfg: AttackConfig, targets=None) -> np.ndarray:
    """Adversarial versions of a batch. ``targets`` is required for targeted runs."""
    if cfg.method is AttackMethod.FAST_GRADIENT_SIGN:
        return fgsm_batch(net, images, labels, cfg.epsilon)
    if cfg.method is AttackMethod.ITERATIVE_NONTARGETED:
        return iterative_batch(net, images, labels, cfg.epsilon, cfg.alpha,
                               cfg.iterations, targeted=False)
    if targets is None:
        targets = [resolve_target(cfg.target, net.class_count, int(y)) for y in labels]
    return iterative_batch(net, images, np.asarray(targets), cfg.epsilon, cfg.alpha,
                           cfg.iterations, targeted=True)


# ---------------------------------------------------------------------------
# single-image API

def _outcome(net, item, adversarial, target, iterations_run):
    probs = probs_batch(net, np.stack([item.pixels, adversarial]))
    clean_probs, adv_probs = probs[0], probs[1]
    diff = np.abs(adversarial - item.pixels)
    return AttackOutcome(
        original=item,
        adversarial=adversarial,
        clean_probs=clean_probs,
        adv_probs=adv_probs,
        target=target,
        linf_norm=float(diff.max()) if diff.size else 0.0,
        iterations_run=iterations_run,
        success_flipped_top1=bool(np.argmax(adv_probs) != np.argmax(clean_probs)),
        success_hit_target=None if target is None else bool(np.argmax(adv_probs) == target),
    )


def fgsm(net: Network, item: LabeledImage, epsilon: float) -> AttackOutcome:
    adv = fgsm_batch(net, item.pixels[None], [item.label], epsilon)[0]
    return _outcome(net, item, adv, None, 1)


def iterative_nontargeted(net: Network, item: LabeledImage, cfg: AttackConfig) -> AttackOutcome:
    if cfg.method is not AttackMethod.ITERATIVE_NONTARGETED:
        raise ValueError(f"expected an iterative_nontargeted config, got {cfg.method.value}")
    adv = iterative_batch(net, item.pixels[None], [item.label], cfg.epsilon, cfg.alpha,
                          cfg.iterations, targeted=False)[0]
    return _outcome(net, item, adv, None, cfg.iterations)


def iterative_targeted(net: Network, item: LabeledImage, cfg: AttackConfig) -> AttackOutcome:
    if cfg.method is not AttackMethod.ITERATIVE_TARGETED:
        raise ValueError(f"expected an iterative_targeted config, got {cfg.method.value}")
    target = resolve_target(cfg.target, net.class_count, item.label)
    adv = iterative_batch(net, item.pixels[None], [target], cfg.epsilon, cfg.alpha,
                          cfg.iterations, targeted=True)[0]
    return _outcome(net, item, adv, target, cfg.iterations)


def run_attack(net: Network, item: LabeledImage, cfg: AttackConfig) -> AttackOutcome:
    """Dispatch on ``cfg.method``."""
    if cfg.method is AttackMethod.FAST_GRADIENT_SIGN:
        return fgsm(net, item, cfg.epsilon)
    if cfg.method is AttackMethod.ITERATIVE_NONTARGETED:
        return iterative_nontargeted(net, item, cfg)
    return iterative_targeted(net, item, cfg)


# ---------------------------------------------------------------------------
# PGM / PPM export

def pnm_bytes(pixels: np.ndarray) -> bytes:
    """Binary PGM (P5) for one channel, PPM (P6) for three; maxval 255."""
    pixels = np.asarray(pixels, dtype=DTYPE)
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    h, w, c = pixels.shape
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot export a {c}-channel image as PGM/PPM")
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + to_u8(pixels).tobytes()


def write_pnm(path, pixels: np.ndarray) -> int:
    data = pnm_bytes(pixels)
    Path(path).write_bytes(data)
    return len(data)


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by `write_pnm` back into [0, 1] floats."""
    data = Path(path).read_bytes()
    magic, w, h, maxval = data.split(maxsplit=4)[:4]
    w, h, maxval = int(w), int(h), int(maxval)
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError("only binary P5/P6 files with maxval 255 are supported")
    c = 1 if magic == b"P5" else 3
    # pixel bytes may themselves look like whitespace, so slice from the end
    body = data[len(data) - h * w * c:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, c).astype(DTYPE) / 255.0
