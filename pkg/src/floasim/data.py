"""Datasets: the MNIST IDX reader, a Gaussian-blob generator, and worker shards."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StructuralError, UsageError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_ENV_VAR = "FLOASIM_DATA"

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, input_dim) float64
    y: np.ndarray  # (n,) int64

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise StructuralError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


def _open(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _header(fh, path: Path, fmt: str) -> tuple:
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise StructuralError(f"{path}: truncated header")
    return struct.unpack(fmt, raw)


def read_idx_images(path) -> np.ndarray:
    """Read an IDX3 image file into a float64 array of shape (n, rows*cols), scaled to [0, 1]."""
    path = Path(path)
    with _open(path) as fh:
        magic, n, rows, cols = _header(fh, path, ">IIII")
        if magic != IDX_IMAGES_MAGIC:
            raise StructuralError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        raw = fh.read(n * rows * cols)
    if len(raw) != n * rows * cols:
        raise StructuralError(f"{path}: truncated, expected {n * rows * cols} pixel bytes")
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        magic, n = _header(fh, path, ">II")
        if magic != IDX_LABELS_MAGIC:
            raise StructuralError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        raw = fh.read(n)
    if len(raw) != n:
        raise StructuralError(f"{path}: truncated, expected {n} labels")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx(images: np.ndarray | None, labels: np.ndarray | None, images_path=None, labels_path=None) -> None:
    """Write uint8 images (n, rows, cols) and/or labels in IDX format. Used to build fixtures."""
    if images is not None:
        images = np.asarray(images, dtype=np.uint8)
        n, rows, cols = images.shape
        with open(images_path, "wb") as fh:
            fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
            fh.write(images.tobytes())
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        with open(labels_path, "wb") as fh:
            fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
            fh.write(labels.tobytes())


def resolve_mnist_root(path=None) -> Path:
    """Pick the MNIST directory: explicit path, then ``$FLOASIM_DATA``, then ``./data/mnist``."""
    if path:
        return Path(path)
    env = os.environ.get(DATA_ENV_VAR)
    if env:
        return Path(env)
    return Path("data/mnist")


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        candidate = root / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"MNIST file {stem}[.gz] not found under {root}")


def mnist_available(path=None) -> bool:
    root = resolve_mnist_root(path)
    try:
        for split in _MNIST_FILES.values():
            for stem in split:
                _find(root, stem)
    except FileNotFoundError:
        return False
    return True


def load_mnist(path=None, split: str = "train") -> Dataset:
    root = resolve_mnist_root(path)
    img_stem, lbl_stem = _MNIST_FILES[split]
    X = read_idx_images(_find(root, img_stem))
    y = read_idx_labels(_find(root, lbl_stem))
    if X.shape[0] != y.shape[0]:
        raise StructuralError(f"{split}: {X.shape[0]} images but {y.shape[0]} labels")
    return Dataset(X, y)


def make_blobs(n: int, input_dim: int, n_classes: int, rng: np.random.Generator,
               separation: float = 3.0, noise: float = 1.0) -> Dataset:
    """Balanced Gaussian class blobs around random centres of norm ``separation``."""
    if n < 1:
        raise UsageError("n must be >= 1")
    centres = rng.standard_normal((n_classes, input_dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    y = np.arange(n) % n_classes
    rng.shuffle(y)
    X = centres[y] + noise * rng.standard_normal((n, input_dim))
    return Dataset(X, y.astype(np.int64))


def draw_shard(pool_size: int, shard_size: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of ``shard_size`` distinct samples from a pool."""
    if shard_size > pool_size:
        raise UsageError(f"shard_size {shard_size} exceeds pool size {pool_size}")
    return np.sort(rng.choice(pool_size, size=shard_size, replace=False))
