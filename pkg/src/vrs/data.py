"""IDX image/label files and binarised datasets."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_TRAIN_SIZE = 60_000
MNIST_VALID_SIZE = 10_000


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic=None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    data = _read_bytes(path)
    if len(data) < 4:
        raise FormatError("file too short for an IDX magic number", len(data))
    magic, = struct.unpack(">I", data[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise FormatError(f"bad IDX magic 0x{magic:08x}", 0)
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"expected magic 0x{expected_magic:08x}, found 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(data) < end:
        raise FormatError("truncated IDX dimension header", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) < end + count:
        raise FormatError(f"truncated IDX payload: expected {count} bytes", len(data))
    if len(data) > end + count:
        raise FormatError("trailing bytes after IDX payload", end + count)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=end).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


@dataclass
class Dataset:
    images: np.ndarray  # (n, rows * cols) of 0/1 uint8
    splits: np.ndarray  # per-image tag: train / valid / test
    labels: np.ndarray | None = None
    source: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def split(self, tag) -> np.ndarray:
        """Images of one split as float64 rows."""
        return self.images[self.splits == tag].astype(np.float64)

    @property
    def split_sizes(self) -> dict:
        tags, counts = np.unique(self.splits, return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}


def binarize(pixels, mode="threshold", rng=None) -> np.ndarray:
    """Scale bytes to [0, 1] and binarise by ``>= 0.5`` or by Bernoulli draws."""
    scaled = np.asarray(pixels, dtype=np.float64) / 255.0
    if mode == "threshold":
        return (scaled >= 0.5).astype(np.uint8)
    if mode == "sample":
        if rng is None:
            raise ValueError("sample binarisation needs an rng")
        return (rng.random(scaled.shape) < scaled).astype(np.uint8)
    raise ValueError(f"unknown binarisation mode {mode!r}")


def ingest_idx(images_path, labels_path=None, binarize_mode="threshold", seed=0,
               split="train") -> Dataset:
    """Load IDX images (and labels) as a flat binary dataset.

    A 60,000-image training file is split into the usual 50,000 train and
    10,000 validation images; otherwise every image carries ``split``.
    """
    raw = read_idx(images_path, IMAGES_MAGIC)
    n, rows, cols = raw.shape
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, LABELS_MAGIC)
        if labels.shape[0] != n:
            raise ShapeError(f"{n} images but {labels.shape[0]} labels")
    rng = np.random.default_rng(seed)
    images = binarize(raw.reshape(n, rows * cols), binarize_mode, rng).reshape(n, rows * cols)
    splits = np.full(n, split, dtype=object)
    if split == "train" and n == MNIST_TRAIN_SIZE:
        splits[MNIST_TRAIN_SIZE - MNIST_VALID_SIZE:] = "valid"
    source = {"images": str(images_path), "labels": None if labels_path is None else str(labels_path),
              "binarize": binarize_mode, "seed": seed, "rows": rows, "cols": cols}
    return Dataset(images, splits.astype(str), labels, source)


def digits_standin(n=1797, size=28, pad=4):
    """Greyscale 28x28 digit images made by upscaling scikit-learn's 8x8 digits.

    The digit fills the central ``size - 2 * pad`` square, as in MNIST.

    Used when real MNIST files are unavailable. Returns ``(images, labels)``
    as uint8 arrays ready for :func:`write_idx`.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = digits.images[:n] / 16.0
    inner = size - 2 * pad
    big = np.zeros((len(imgs), size, size))
    big[:, pad:pad + inner, pad:pad + inner] = np.stack([zoom(im, inner / 8.0, order=1) for im in imgs])
    big = np.clip(big, 0.0, 1.0)
    return (255 * big).round().astype(np.uint8), digits.target[:n].astype(np.uint8)
