"""Labelled image sets: IDX files, a procedural synthetic corpus, subsetting.

Pixels are float64 in [0, 1], stored as an (N, H, W, C) array.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .tensor_core import DTYPE

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Malformed IDX input."""


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray
    label: int


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    class_names: list[str] | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError("images must be an (N, H, W, C) array")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ValueError("class_names must have one entry per class")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.class_count,
                       self.class_names)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        """First ``n_first`` items and the rest, in order."""
        idx = np.arange(len(self))
        return self.take(idx[:n_first]), self.take(idx[n_first:])


# ---------------------------------------------------------------------------
# IDX

def _read_exact(buf: bytes, offset: int, size: int, what: str) -> bytes:
    chunk = buf[offset:offset + size]
    if len(chunk) != size:
        raise TruncatedFileError(f"truncated {what}: expected {size} bytes at offset "
                                 f"{offset}, found {len(chunk)}")
    return chunk


def parse_idx_images(buf: bytes) -> np.ndarray:
    """Decode an IDX image file into a uint8 (N, rows, cols) array."""
    magic, = struct.unpack(">I", _read_exact(buf, 0, 4, "header"))
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x} for images file "
                            f"(expected 0x{IMAGES_MAGIC:08x})")
    count, rows, cols = struct.unpack(">III", _read_exact(buf, 4, 12, "header"))
    size = count * rows * cols
    body = _read_exact(buf, 16, size, "pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    magic, = struct.unpack(">I", _read_exact(buf, 0, 4, "header"))
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x} for labels file "
                            f"(expected 0x{LABELS_MAGIC:08x})")
    count, = struct.unpack(">I", _read_exact(buf, 4, 4, "header"))
    return np.frombuffer(_read_exact(buf, 8, count, "label data"), dtype=np.uint8)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (uncompressed).

    ``class_count`` defaults to ``max(label) + 1`` but never less than 2.
    """
    pixels = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if len(pixels) != len(labels):
        raise CountMismatchError(f"count mismatch: {len(pixels)} images but "
                                 f"{len(labels)} labels")
    if class_count is None:
        class_count = max(2, int(labels.max()) + 1 if labels.size else 2)
    images = pixels.astype(DTYPE)[..., None] / 255.0
    return Dataset(images, labels.astype(np.int64), class_count)


def to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def idx_images_bytes(images: np.ndarray) -> bytes:
    if images.ndim == 4:
        if images.shape[3] != 1:
            raise ValueError("IDX export supports single-channel images only")
        images = images[..., 0]
    n, rows, cols = images.shape
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + to_u8(images).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("IDX labels must fit in one byte")
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def save_idx(data: Dataset, images_path, labels_path) -> None:
    Path(images_path).write_bytes(idx_images_bytes(data.images))
    Path(labels_path).write_bytes(idx_labels_bytes(data.labels))


# MNIST file names, so a downloaded MNIST directory drops in unchanged
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_split(data_dir, split: str, class_count: int | None = None) -> Dataset:
    images_name, labels_name = SPLIT_FILES[split]
    d = Path(data_dir)
    return load_idx(d / images_name, d / labels_name, class_count)


def save_split(data: Dataset, data_dir, split: str) -> None:
    images_name, labels_name = SPLIT_FILES[split]
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_idx(data, d / images_name, d / labels_name)


# ---------------------------------------------------------------------------
# synthetic corpus

PATTERN_KINDS = ("bar", "cross", "disk", "ring", "checker")
# anchor points (fractions of the side) cycled through as the class index grows
_ANCHORS = ((0.35, 0.35), (0.65, 0.65), (0.35, 0.65), (0.65, 0.35), (0.5, 0.5))


def _pattern(kind: str, size: int, cy: float, cx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(DTYPE)
    dy, dx = yy - cy, xx - cx
    r = 0.22 * size
    half = max(1.0, size / 14)
    if kind == "bar":
        return ((np.abs(dy) <= half) & (np.abs(dx) <= r)).astype(DTYPE)
    if kind == "cross":
        arm = r * 0.9
        return (((np.abs(dy) <= half) & (np.abs(dx) <= arm))
                | ((np.abs(dx) <= half) & (np.abs(dy) <= arm))).astype(DTYPE)
    dist = np.hypot(dy, dx)
    if kind == "disk":
        return (dist <= 0.7 * r).astype(DTYPE)
    if kind == "ring":
        return ((dist <= r) & (dist >= r - 2 * half)).astype(DTYPE)
    cell = max(1.0, size / 9)
    inside = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    parity = (np.floor(dy / cell) + np.floor(dx / cell)) % 2 == 0
    return (inside & parity).astype(DTYPE)


def class_pattern(label: int, size: int, shift=(0, 0)) -> np.ndarray:
    """Noise-free template for ``label``: the kind cycles first, then the anchor."""
    kind = PATTERN_KINDS[label % len(PATTERN_KINDS)]
    anchor = _ANCHORS[(label // len(PATTERN_KINDS)) % len(_ANCHORS)]
    # classes beyond 25 reuse anchors, nudged so templates stay distinct
    nudge = label // (len(PATTERN_KINDS) * len(_ANCHORS))
    cy = anchor[0] * (size - 1) + shift[0] + nudge
    cx = anchor[1] * (size - 1) + shift[1] - nudge
    return _pattern(kind, size, cy, cx)


def generate_synthetic(n: int, size: int = 28, class_count: int = 10, seed: int = 0,
                       contrast: float = 0.18, noise: float = 0.05,
                       jitter: int = 2) -> Dataset:
    """Procedural grayscale images, one geometric pattern per class.

    Each image is a flat background of random brightness with the class
    template drawn at ``contrast`` above it, shifted by up to ``jitter``
    pixels, plus Gaussian pixel noise of standard deviation ``noise``.
    Labels are assigned round-robin so classes are balanced within one.
    """
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if n < class_count:
        raise ValueError(f"need n >= class_count ({n} < {class_count})")
    if size < 8:
        raise ValueError("size must be >= 8")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % class_count
    images = np.empty((n, size, size, 1), dtype=DTYPE)
    for i, label in enumerate(labels):
        shift = rng.integers(-jitter, jitter + 1, size=2)
        base = rng.uniform(0.25, 0.55)
        img = base + contrast * class_pattern(int(label), size, shift)
        img += rng.normal(0.0, noise, size=(size, size))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    names = [f"{PATTERN_KINDS[c % 5]}-{(c // 5)}" for c in range(class_count)]
    return Dataset(images, labels, class_count, names)


def sample_subset(data: Dataset, n: int = 20, seed: int = 0) -> Dataset:
    """``n`` items drawn without replacement, in seeded order."""
    if not 0 <= n <= len(data):
        raise ValueError(f"cannot draw {n} items from a dataset of {len(data)}")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(data))[:n]
    return data.take(idx)

