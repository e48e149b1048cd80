"""Dataset loading, generation, and batching.

File formats:

* IDX (big-endian): magic 2051 for image files (u32 count, u32 rows, u32
  cols, then count*rows*cols unsigned bytes) and 2049 for label files (u32
  count, then count unsigned bytes). Malformed files raise DataFormatError
  naming the byte offset.
* 1-D regression text files: one float per line (inputs file and targets
  file), whitespace tolerant; malformed lines raise DataFormatError naming
  the line number.

Image pixels are scaled to [0, 1] and standardized with the fixed constants
MNIST_MEAN / MNIST_STD. When the canonical 28x28 corpus is not on disk, a
deterministic stand-in is built from scikit-learn's bundled 8x8 handwritten
digits (upscaled and augmented; train/test source images kept disjoint) and
written through the same IDX writer that the loader parses.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, ShapeError
from .linalg import Rng

__all__ = [
    "Dataset",
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
    "MNIST_MEAN",
    "MNIST_STD",
    "gen_two_moons",
    "load_idx_images",
    "load_idx_labels",
    "load_mnist_idx",
    "load_snelson",
    "make_digits_corpus",
    "make_snelson_like",
    "minibatches",
    "save_snelson",
    "split",
    "take",
    "with_bias_column",
    "write_idx_images",
    "write_idx_labels",
]

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081


@dataclass
class Dataset:
    """Feature matrix plus aligned targets (int64 labels or float64 columns)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.x.shape}")
        y = np.asarray(self.y)
        if np.issubdtype(y.dtype, np.integer):
            self.y = np.ascontiguousarray(y, dtype=np.int64)
            if self.y.ndim != 1:
                raise ShapeError(f"labels must be 1-D, got shape {self.y.shape}")
        else:
            self.y = np.ascontiguousarray(y, dtype=np.float64)
            if self.y.ndim == 1:
                self.y = self.y.reshape(-1, 1)
            if self.y.ndim != 2:
                raise ShapeError(f"targets must be 1-D or 2-D, got shape {y.shape}")
        if self.y.shape[0] != self.x.shape[0]:
            raise ShapeError(
                f"{self.x.shape[0]} feature rows vs {self.y.shape[0]} targets"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.y.ndim == 1


def take(ds: Dataset, idx) -> Dataset:
    return Dataset(ds.x[idx], ds.y[idx])


def with_bias_column(ds: Dataset) -> Dataset:
    """Copy of `ds` with a constant-1 feature appended.

    The networks here have no additive bias terms, so without this column
    every unit computes an odd function of its inputs and the whole net can
    only represent decision surfaces symmetric about the origin. The extra
    constant input restores an (binarized, ±1) intercept per first-layer
    unit.
    """
    ones = np.ones((ds.n, 1))
    return Dataset(np.hstack([ds.x, ones]), ds.y)


# ---------------------------------------------------------------------------
# IDX image/label files


def _read_u32(buf: bytes, offset: int, path, what: str) -> int:
    if offset + 4 > len(buf):
        raise DataFormatError(
            f"{path}: truncated at offset {offset} while reading {what}"
        )
    return struct.unpack(">I", buf[offset : offset + 4])[0]


def load_idx_images(path) -> np.ndarray:
    """Raw (count, rows, cols) uint8 array from a big-endian IDX image file."""
    path = Path(path)
    buf = path.read_bytes()
    magic = _read_u32(buf, 0, path, "magic")
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{path}: bad magic {magic} at offset 0, expected {IDX_IMAGE_MAGIC}"
        )
    count = _read_u32(buf, 4, path, "image count")
    rows = _read_u32(buf, 8, path, "row count")
    cols = _read_u32(buf, 12, path, "column count")
    need = 16 + count * rows * cols
    if len(buf) != need:
        raise DataFormatError(
            f"{path}: payload length {len(buf) - 16} at offset 16 does not match "
            f"header ({count}x{rows}x{cols} = {count * rows * cols} bytes)"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Raw (count,) uint8 label array from a big-endian IDX label file."""
    path = Path(path)
    buf = path.read_bytes()
    magic = _read_u32(buf, 0, path, "magic")
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{path}: bad magic {magic} at offset 0, expected {IDX_LABEL_MAGIC}"
        )
    count = _read_u32(buf, 4, path, "label count")
    if len(buf) != 8 + count:
        raise DataFormatError(
            f"{path}: payload length {len(buf) - 8} at offset 8 does not match "
            f"header count {count}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ShapeError("images must be a (count, rows, cols) uint8 array")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if labels.dtype != np.uint8:
        if (labels < 0).any() or (labels > 255).any():
            raise ValueError("labels must fit in a byte")
        labels = labels.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_mnist_idx(images_path, labels_path, normalize: bool = True) -> Dataset:
    """Flattened image dataset from an IDX image/label file pair.

    Pixels are scaled to [0, 1]; with `normalize` they are then standardized
    as (x - MNIST_MEAN) / MNIST_STD.
    """
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if normalize:
        x = (x - MNIST_MEAN) / MNIST_STD
    return Dataset(x, labels.astype(np.int64))


# ---------------------------------------------------------------------------
# synthetic generators


def gen_two_moons(n_per_class: int, noise_sd: float, seed: int) -> Dataset:
    """Two interleaving half circles with isotropic Gaussian noise.

    Class 0 sits on the upper unit arc centered at the origin; class 1 on the
    lower arc of the unit circle centered at (1, 0.5). Arc positions are an
    even angular grid, so noise_sd=0 puts class-0 points exactly on the arc.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise_sd < 0.0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    theta = np.linspace(0.0, np.pi, n_per_class)
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    lower = np.column_stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)])
    x = np.vstack([upper, lower])
    if noise_sd > 0.0:
        x = x + Rng(seed).normal(x.shape, noise_sd)
    y = np.concatenate([np.zeros(n_per_class, np.int64), np.ones(n_per_class, np.int64)])
    return Dataset(x, y)


def _read_float_lines(path) -> np.ndarray:
    vals = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                vals.append(float(s))
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: cannot parse {s!r} as a float"
                ) from None
    return np.asarray(vals, dtype=np.float64)


def load_snelson(inputs_path, targets_path) -> Dataset:
    """1-D regression pair from two one-float-per-line text files."""
    x = _read_float_lines(inputs_path)
    y = _read_float_lines(targets_path)
    if x.shape[0] != y.shape[0]:
        raise DataFormatError(
            f"{inputs_path} has {x.shape[0]} values but {targets_path} has {y.shape[0]}"
        )
    if x.shape[0] == 0:
        raise DataFormatError(f"{inputs_path}: no data lines")
    return Dataset(x.reshape(-1, 1), y.reshape(-1, 1))


def save_snelson(ds: Dataset, inputs_path, targets_path) -> None:
    np.savetxt(inputs_path, ds.x.ravel(), fmt="%.17g")
    np.savetxt(targets_path, ds.y.ravel(), fmt="%.17g")


def make_snelson_like(n: int = 200, seed: int = 7) -> Dataset:
    """Deterministic 200-point noisy 1-D curve with an input gap.

    Smooth wiggly target with observation noise and no inputs in
    (2.2, 3.2), the texture the 1-D uncertainty experiment needs. Inputs and
    targets are both standardized: the targets to match a network whose last
    layer is batch norm, the inputs so tanh units see values within their
    responsive range instead of saturating.
    """
    rng = Rng(seed)
    n_left = int(round(n * 0.4))
    left = 0.1 + 2.1 * rng.uniform_open(n_left)
    right = 3.2 + 2.7 * rng.uniform_open(n - n_left)
    x = np.sort(np.concatenate([left, right]))
    f = np.sin(1.8 * x) + 0.35 * np.cos(4.5 * x) - 0.25 * x + 0.6
    y = f + rng.normal(x.shape, 0.12)
    x = (x - x.mean()) / x.std()
    y = (y - y.mean()) / y.std()
    return Dataset(x.reshape(-1, 1), y.reshape(-1, 1))


def make_digits_corpus(n_train: int, n_test: int, seed: int):
    """Deterministic 28x28 digit corpus from scikit-learn's bundled digits.

    The 1797 8x8 source images are split per class into disjoint train/test
    pools, bilinearly upscaled to 28x28, and augmented with integer pixel
    shifts and mild noise until the requested counts are reached. Returns
    (train_images, train_labels, test_images, test_labels) with uint8 images
    ready for the IDX writer.
    """
    from scipy.ndimage import shift as nd_shift
    from scipy.ndimage import zoom as nd_zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images / 16.0  # (1797, 8, 8) in [0, 1]
    labels = digits.target

    rng = Rng(seed)
    train_pool, test_pool = [], []
    for cls in range(10):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.shape[0])]
        n_tr = int(round(idx.shape[0] * 2 / 3))
        train_pool.append(idx[:n_tr])
        test_pool.append(idx[n_tr:])
    train_pool = np.concatenate(train_pool)
    test_pool = np.concatenate(test_pool)

    def upscale(img):
        big = nd_zoom(img, 28 / 8, order=1, prefilter=False)
        return np.clip(big, 0.0, 1.0)

    big_cache = {int(i): upscale(images[i]) for i in np.concatenate([train_pool, test_pool])}

    def build(pool, count):
        picks = pool[rng.integers(0, pool.shape[0], count)]
        dx = rng.integers(-2, 3, count)
        dy = rng.integers(-2, 3, count)
        out = np.empty((count, 28, 28), dtype=np.uint8)
        noise = rng.normal((count, 28, 28), 0.03)
        for i, src in enumerate(picks):
            img = big_cache[int(src)]
            img = nd_shift(img, (dy[i], dx[i]), order=0, cval=0.0)
            img = np.clip(img + noise[i], 0.0, 1.0)
            out[i] = np.round(img * 255.0).astype(np.uint8)
        return out, labels[picks].astype(np.uint8)

    train_images, train_labels = build(train_pool, n_train)
    test_images, test_labels = build(test_pool, n_test)
    return train_images, train_labels, test_images, test_labels


# ---------------------------------------------------------------------------
# splits and batches


def split(ds: Dataset, fraction: float, seed: int):
    """Disjoint (rest, held_out) split by a seeded permutation.

    `fraction` of the rows (floor) become the held-out part; order within
    each part follows the permutation. Deterministic in (fraction, seed).
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    perm = Rng.for_stream(seed, 101).permutation(ds.n)
    n_held = int(fraction * ds.n)
    return take(ds, perm[n_held:]), take(ds, perm[:n_held])


def minibatches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch: a seeded shuffle cut into fixed-size runs.

    The permutation is derived from (seed, epoch), every index appears exactly
    once, and the final batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = Rng.for_stream(seed, 202, epoch).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]
