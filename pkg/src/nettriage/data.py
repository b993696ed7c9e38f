"""Dataset ingestion, preprocessing, augmentation, and batching."""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConsistencyError,
    DegenerateBatchError,
    FormatError,
    InvalidLabelError,
    InvalidShapeError,
    TruncationError,
    UnfittedError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SYNTH_CLASSES = ("filled_square", "hollow_square", "diagonal_stripe", "disk")


@dataclass
class Dataset:
    images: np.ndarray  # [N, H, W, C] float32
    labels: np.ndarray  # [N] int64
    split: str
    class_count: int

    def __post_init__(self):
        if self.images.shape[0] == 0:
            raise InvalidShapeError("dataset must be non-empty")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise InvalidLabelError(
                f"labels must lie in [0,{self.class_count})")

    def __len__(self):
        return self.images.shape[0]

    def take(self, n):
        return Dataset(self.images[:n], self.labels[:n], self.split,
                       self.class_count)


def _read_be32(buf, offset, path):
    if offset + 4 > len(buf):
        raise TruncationError(f"{path}: header ends early")
    return struct.unpack_from(">I", buf, offset)[0]


def load_mnist_idx(images_path, labels_path, split="train"):
    """Parse an IDX image/label file pair.

    Big-endian magic and dimension words; unsigned-byte pixels scaled so
    byte 255 maps to exactly 1.0.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")
    n = _read_be32(raw, 4, images_path)
    h = _read_be32(raw, 8, images_path)
    w = _read_be32(raw, 12, images_path)
    if len(raw) < 16 + n * h * w:
        raise TruncationError(
            f"{images_path}: need {16 + n * h * w} bytes, have {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(n, h, w, 1)

    with open(labels_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}")
    n_lbl = _read_be32(raw, 4, labels_path)
    if len(raw) < 8 + n_lbl:
        raise TruncationError(
            f"{labels_path}: need {8 + n_lbl} bytes, have {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_lbl, offset=8).astype(np.int64)

    if n != n_lbl:
        raise ConsistencyError(f"{n} images but {n_lbl} labels")
    return Dataset(images, labels, split, class_count=10)


def _draw_shape(img, label, rng):
    h, w = img.shape
    cy = 15.5 + rng.uniform(-6, 6)
    cx = 15.5 + rng.uniform(-6, 6)
    s = rng.uniform(5.0, 9.0)
    amp = rng.uniform(0.55, 1.0)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    name = SYNTH_CLASSES[label]
    if name == "filled_square":
        mask = (np.abs(dy) <= s) & (np.abs(dx) <= s)
    elif name == "hollow_square":
        outer = (np.abs(dy) <= s) & (np.abs(dx) <= s)
        inner = (np.abs(dy) <= s - 2.5) & (np.abs(dx) <= s - 2.5)
        mask = outer & ~inner
    elif name == "diagonal_stripe":
        t = rng.uniform(1.5, 3.0)
        if rng.uniform() < 0.5:
            mask = np.abs(dx - dy) <= t
        else:
            mask = np.abs(dx + dy) <= t
    else:  # disk
        mask = dy * dy + dx * dx <= s * s
    img[mask] = amp
    img += rng.normal(0.0, 0.06, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)


def synth_shapes(n, seed, split="train"):
    """Deterministic 32x32x1 dataset of four parametric shape classes.

    Label-balanced: class ``k`` receives ``ceil`` or ``floor`` of ``n/4``
    samples so counts differ by at most one.
    """
    k = len(SYNTH_CLASSES)
    if n < k:
        raise InvalidShapeError(f"need at least {k} samples, got {n}")
    # the split participates in the stream so train/test never overlap
    rng = np.random.default_rng([seed, zlib.crc32(split.encode())])
    labels = np.array([i % k for i in range(n)], dtype=np.int64)
    labels = labels[rng.permutation(n)]
    images = np.zeros((n, 32, 32, 1), dtype=np.float32)
    for i in range(n):
        canvas = np.zeros((32, 32), dtype=np.float64)
        _draw_shape(canvas, int(labels[i]), rng)
        images[i, :, :, 0] = canvas.astype(np.float32)
    return Dataset(images, labels, split, class_count=k)


@dataclass
class Preprocessor:
    """Zero-center/normalize by train-split statistics; optional zero pad
    to a square spatial size; per-sample horizontal flips at train time."""

    pad_to: int | None = None
    hflip_prob: float = 0.0
    mean: np.ndarray | None = field(default=None, repr=False)
    std: np.ndarray | None = field(default=None, repr=False)

    def fit(self, train_ds):
        x = train_ds.images
        self.mean = x.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
        self.std = x.std(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
        if np.any(self.std <= 0):
            raise DegenerateBatchError("constant channel: std would be zero")
        return self

    def transform_images(self, images):
        if self.mean is None or self.std is None:
            raise UnfittedError("preprocessor applied before fit()")
        x = (images - self.mean) / self.std
        if self.pad_to is not None:
            h, w = x.shape[1], x.shape[2]
            if self.pad_to < max(h, w):
                raise InvalidShapeError(
                    f"pad_to {self.pad_to} smaller than input {h}x{w}")
            py, px = self.pad_to - h, self.pad_to - w
            x = np.pad(x, ((0, 0), (py // 2, py - py // 2),
                           (px // 2, px - px // 2), (0, 0)))
        return x.astype(np.float32)


def preprocess(ds, pre):
    return Dataset(pre.transform_images(ds.images), ds.labels, ds.split,
                   ds.class_count)


def augment_batch(images, pre, seed):
    """Horizontal flips with probability ``hflip_prob`` per sample.

    With probability zero the input array is returned untouched.
    """
    if pre.hflip_prob <= 0:
        return images
    rng = np.random.default_rng(seed)
    flip = rng.uniform(size=images.shape[0]) < pre.hflip_prob
    out = images.copy()
    out[flip] = out[flip, :, ::-1, :]
    return out


def batches(ds, batch_size, shuffle_seed=None):
    """One epoch of (images, labels) batches; the final partial batch is kept.

    A shuffle seed gives a deterministic permutation; ``None`` preserves
    dataset order.
    """
    if batch_size < 1:
        raise InvalidShapeError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    order = (np.random.default_rng(shuffle_seed).permutation(n)
             if shuffle_seed is not None else np.arange(n))
    for start in range(0, n, batch_size):
        sel = order[start:start + batch_size]
        yield ds.images[sel], ds.labels[sel]


def split_train_val(ds, val_count):
    """Hold out the last ``val_count`` samples as the validation split."""
    if not 0 < val_count < len(ds):
        raise InvalidShapeError(
            f"val_count must lie in (0,{len(ds)}), got {val_count}")
    n = len(ds) - val_count
    train = Dataset(ds.images[:n], ds.labels[:n], "train", ds.class_count)
    val = Dataset(ds.images[n:], ds.labels[n:], "val", ds.class_count)
    return train, val
