"""Image datasets: CIFAR-10 binary batches, a synthetic grating generator, ZCA whitening."""

from dataclasses import dataclass
import math
from pathlib import Path

import numpy as np

from .errors import CorruptDataError, DataNotFoundError, InvalidArgumentError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (32, 32, 3)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class ImageDataset:
    images: np.ndarray  # (M, H, W, C)
    labels: np.ndarray
    split: str
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise InvalidArgumentError(f"images must be (M,H,W,C), got shape {self.images.shape}")
        if self.images.shape[0] == 0:
            raise InvalidArgumentError("a dataset needs at least one image")
        if self.labels.shape != (self.images.shape[0],):
            raise InvalidArgumentError(f"labels shape {self.labels.shape} does not match {self.images.shape[0]} images")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise InvalidArgumentError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, count):
        if count is None or count >= len(self):
            return self
        return ImageDataset(self.images[:count], self.labels[:count], self.split, self.class_count)


# --------------------------------------------------------------------------
# CIFAR-10
# --------------------------------------------------------------------------


def parse_cifar_records(raw: bytes, name="<bytes>"):
    """Decode 3073-byte records (label byte, then R, G, B planes of 32x32 bytes)."""
    if len(raw) % CIFAR_RECORD:
        offset = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
        raise CorruptDataError(f"{name}: truncated record", offset)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CorruptDataError(f"{name}: label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD)
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float32) / 255.0, labels


def _load_cifar_files(directory, names, split):
    images, labels = [], []
    for name in names:
        path = directory / name
        if not path.is_file():
            raise DataNotFoundError(f"CIFAR-10 file not found: {path}")
        x, y = parse_cifar_records(path.read_bytes(), str(path))
        images.append(x)
        labels.append(y)
    return ImageDataset(np.concatenate(images), np.concatenate(labels), split, 10)


def load_cifar10(directory):
    """Read the five training batches and the test batch; pixels scaled to [0, 1]."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataNotFoundError(f"CIFAR-10 directory not found: {directory}")
    train = _load_cifar_files(directory, CIFAR_TRAIN_FILES, "train")
    test = _load_cifar_files(directory, CIFAR_TEST_FILES, "test")
    return train, test


# --------------------------------------------------------------------------
# synthetic gratings
# --------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    classes: int = 2
    samples: int = 800
    size: int = 16
    noise: float = 0.5
    channels: int = 1
    wavelength: float = 4.0
    contrast: float = 0.25


_SPLIT_KEYS = {"train": 0, "test": 1}


def synthetic_dataset(spec: SyntheticSpec, seed=0, split="train"):
    """Oriented sinusoidal gratings plus Gaussian pixel noise.

    Class c has orientation c*pi/classes; every image gets a uniformly random
    phase.  Labels are balanced (round-robin, then shuffled).  The (seed, split)
    pair fully determines the dataset.
    """
    if spec.classes < 2:
        raise InvalidArgumentError(f"synthetic data needs at least 2 classes, got {spec.classes}")
    if spec.samples < 1 or spec.size < 1 or spec.channels < 1:
        raise InvalidArgumentError("samples, size and channels must be positive")
    rng = np.random.default_rng([seed, _SPLIT_KEYS[split]])
    labels = rng.permutation(np.arange(spec.samples) % spec.classes)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=spec.samples)
    angle = labels * math.pi / spec.classes
    u, v = np.meshgrid(np.arange(spec.size), np.arange(spec.size), indexing="ij")
    freq = 2.0 * math.pi / spec.wavelength
    arg = freq * (u[None] * np.cos(angle)[:, None, None] + v[None] * np.sin(angle)[:, None, None]) + phase[:, None, None]
    images = 0.5 + spec.contrast * np.sin(arg)
    images = np.repeat(images[..., None], spec.channels, axis=3)
    images = images + spec.noise * rng.standard_normal(images.shape)
    return ImageDataset(images.astype(np.float32), labels.astype(np.int64), split, spec.classes)


# --------------------------------------------------------------------------
# ZCA whitening
# --------------------------------------------------------------------------


@dataclass
class WhiteningTransform:
    mean: np.ndarray
    matrix: np.ndarray
    epsilon: float


def zca_fit(train: ImageDataset, epsilon=1e-5):
    """ZCA transform U (L + eps I)^-1/2 U^T of the training-pixel covariance."""
    if len(train) < 2:
        raise InvalidArgumentError(f"whitening needs at least 2 images, got {len(train)}")
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    x = train.images.reshape(len(train), -1).astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    eigenvalues, u = np.linalg.eigh(cov)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    matrix = (u / np.sqrt(eigenvalues + epsilon)) @ u.T
    return WhiteningTransform(mean, 0.5 * (matrix + matrix.T), float(epsilon))


def zca_apply(ds: ImageDataset, t: WhiteningTransform):
    flat = ds.images.reshape(len(ds), -1).astype(np.float64)
    if flat.shape[1] != t.mean.shape[0]:
        raise InvalidArgumentError(f"image size {flat.shape[1]} does not match whitening size {t.mean.shape[0]}")
    white = ((flat - t.mean) @ t.matrix).reshape(ds.images.shape)
    return ImageDataset(white.astype(ds.images.dtype), ds.labels, ds.split, ds.class_count)
