"""Small array helpers shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Images use
channel-last (height, width, channels) layout.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float64


def as_tensor(values, shape: Sequence[int] | None = None) -> np.ndarray:
    """Return a finite float64 copy of ``values``, optionally reshaped."""
    t = np.array(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if any(d < 1 for d in shape):
            raise ValueError(f"every dimension must be >= 1, got {shape}")
        if t.size != int(np.prod(shape)):
            raise ValueError(f"{t.size} values cannot fill shape {shape}")
        t = t.reshape(shape)
    check_finite(t)
    return t


def check_finite(t: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{what} contains NaN or Inf")


def sign(t: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) == 0``."""
    t = np.asarray(t, dtype=DTYPE)
    check_finite(t)
    # np.sign(-0.0) is -0.0; adding 0.0 normalises it to +0.0
    return np.sign(t) + 0.0


def box_clamp(t: np.ndarray, lo, hi) -> np.ndarray:
    """Clip ``t`` elementwise into ``[lo, hi]``.

    ``lo`` and ``hi`` may be scalars or arrays broadcastable to ``t``'s shape
    (the result never takes a larger shape than ``t``).
    """
    t = np.asarray(t, dtype=DTYPE)
    lo = np.asarray(lo, dtype=DTYPE)
    hi = np.asarray(hi, dtype=DTYPE)
    for name, bound in (("lo", lo), ("hi", hi)):
        try:
            shape = np.broadcast_shapes(t.shape, bound.shape)
        except ValueError:
            raise ValueError(
                f"{name} shape {bound.shape} does not broadcast to {t.shape}"
            ) from None
        if shape != t.shape:
            raise ValueError(f"{name} shape {bound.shape} does not broadcast to {t.shape}")
    if np.any(lo > hi):
        raise ValueError("box_clamp requires lo <= hi elementwise")
    return np.minimum(hi, np.maximum(lo, t))


def top_k(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, largest first.

    Ties go to the lower index.
    """
    scores = np.asarray(scores, dtype=DTYPE)
    if scores.ndim != 1:
        raise ValueError("top_k expects a rank-1 score vector")
    if not 1 <= k <= scores.size:
        raise ValueError(f"k must be in [1, {scores.size}], got {k}")
    # stable sort on the negated scores keeps equal scores in index order
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]
