"""Dataset ingestion: MNIST IDX files and a synthetic two-blob generator."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .grouping import Dims

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Images of shape ``(N, H, W, C)`` in ``[0, 1]`` with integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if len(self.images) == 0:
            raise DataError("dataset is empty")
        if self.labels.shape != (len(self.images),):
            raise DataError("labels must be a vector with one entry per image")
        if not np.all((self.images >= 0.0) & (self.images <= 1.0)):
            raise DataError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.images)

    @property
    def dims(self) -> Dims:
        _, h, w, c = self.images.shape
        return Dims(width=w, height=h, channels=c)

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _open(path):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    shape = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    payload = raw[4 + 4 * ndim :]
    if len(payload) != int(np.prod(shape)):
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {shape}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def read_idx_images(path) -> np.ndarray:
    """Read an IDX3 image file as ``(N, H, W, 1)`` floats scaled to ``[0, 1]``."""
    pixels = _read_idx(path, IDX_IMAGES_MAGIC, 3)
    return pixels[..., None].astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABELS_MAGIC, 1).astype(np.int64)


def write_idx_images(path, pixels: np.ndarray) -> None:
    """Write ``(N, H, W)`` uint8 pixels in IDX3 layout (gzip if path ends in .gz)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, *pixels.shape)
    _write(path, header + pixels.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    header = struct.pack(">2I", IDX_LABELS_MAGIC, len(labels))
    _write(path, header + labels.tobytes())


def _write(path, blob: bytes) -> None:
    path = os.fspath(path)
    if path.endswith(".gz"):
        # mtime=0 keeps the archive bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)


def _find(directory, stem: str) -> str:
    for name in (stem, stem + ".gz"):
        candidate = os.path.join(directory, name)
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory, split: str = "train") -> Dataset:
    """Load ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` from a directory."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    prefix = {"train": "train", "test": "t10k"}[split]
    images = read_idx_images(_find(directory, f"{prefix}-images-idx3-ubyte"))
    labels = read_idx_labels(_find(directory, f"{prefix}-labels-idx1-ubyte"))
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels in {directory}")
    return Dataset(images, labels)


def synthetic_blobs(num: int, dims: Dims, seed: int = 0, separation: float = 0.35) -> Dataset:
    """Two-class images: class 0 brightens the left half, class 1 the right.

    Pixels are Gaussian around 0.5 +/- ``separation`` on the informative half
    and clipped to ``[0, 1]``; useful as a network-free test set.
    """
    if num < 1:
        raise DataError("num must be positive")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=num)
    H, W, C = dims.shape
    base = np.full((num, H, W, C), 0.5)
    left = np.arange(W) < W // 2
    sign = np.where(labels == 0, 1.0, -1.0)[:, None]
    base[:, :, left, :] += (sign * separation)[:, :, None, None]
    base[:, :, ~left, :] -= (sign * separation)[:, :, None, None]
    images = np.clip(base + 0.1 * rng.standard_normal(base.shape), 0.0, 1.0)
    return Dataset(images, labels)
