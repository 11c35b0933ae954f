"""
Dataset ingestion: IDX files (MNIST family), seeded Gaussian blobs, subsets.

IDX layout, all integers big-endian:
    0000  u32  magic      0x00000803 images (3-D u8) / 0x00000801 labels (1-D u8)
    0004  u32  count
    0008  u32  rows       images only
    0012  u32  cols       images only
    ....  u8[] payload, row-major
Files ending in .gz are read through gzip.
"""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.services.errors import DataFormatError, DomainError

logger = logging.getLogger("gensmooth.datasets")

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # n × m_x
    targets: np.ndarray  # n × m_y, one-hot
    labels: np.ndarray  # n, int

    def __post_init__(self):
        if not (len(self.inputs) == len(self.targets) == len(self.labels)):
            raise DomainError("inputs, targets and labels differ in length")

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def class_count(self) -> int:
        return int(self.targets.shape[1])

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.targets[indices], self.labels[indices])


def one_hot(labels, class_count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, class_count))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except FileNotFoundError:
        raise DataFormatError("file not found", path=str(path)) from None
    except (OSError, EOFError) as exc:
        raise DataFormatError(f"cannot read file: {exc}", path=str(path)) from None


def _parse_idx(raw: bytes, path: Path, magic: int, ndim: int) -> np.ndarray:
    header = struct.Struct(">" + "I" * (1 + ndim))
    if len(raw) < header.size:
        raise DataFormatError(
            f"truncated header: need {header.size} bytes, have {len(raw)}", byte_offset=len(raw), path=str(path)
        )
    found, *dims = header.unpack_from(raw)
    if found != magic:
        raise DataFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", byte_offset=0, path=str(path))
    size = int(np.prod(dims))
    end = header.size + size
    if len(raw) < end:
        raise DataFormatError(
            f"truncated payload: header declares {size} bytes, file holds {len(raw) - header.size}",
            byte_offset=len(raw),
            path=str(path),
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header.size).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, class_count: int) -> Dataset:
    """Images scaled to [0, 1] and flattened; labels one-hot (label j sets column j)."""
    if class_count < 1:
        raise DomainError(f"class_count must be >= 1, got {class_count}")
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    images = _parse_idx(_read_bytes(images_path), images_path, IMAGE_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", byte_offset=4, path=str(labels_path)
        )
    bad = np.flatnonzero(labels >= class_count)
    if bad.size:
        first = int(bad[0])
        raise DataFormatError(
            f"label {labels[first]} at index {first} is >= class_count {class_count}",
            byte_offset=8 + first,
            path=str(labels_path),
        )
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    logger.info("datasets: loaded %d images of %dx%d from %s", images.shape[0], images.shape[1], images.shape[2], images_path)
    return Dataset(inputs, one_hot(labels, class_count), labels.astype(np.int64))


def write_idx(images_path: str | Path, labels_path: str | Path, images, labels) -> None:
    """Write u8 images (n × rows × cols) and labels (n) in IDX layout."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3:
        raise DomainError(f"images must be n x rows x cols, got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise DomainError("one label per image is required")
    if images.min(initial=0) < 0 or images.max(initial=0) > 255 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise DomainError("IDX u8 payload must lie in [0, 255]")
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.astype(np.uint8).tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes())


def synthetic(classes: int, per_class: int, dim: int, separation: float, seed: int) -> Dataset:
    """Gaussian blobs with unit covariance, class c centered at separation·u_c."""
    if classes < 1 or per_class < 1 or dim < 1:
        raise DomainError("synthetic needs classes, per_class and dim >= 1")
    if separation < 0:
        raise DomainError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((classes, dim))
    if classes <= dim:
        q, _ = np.linalg.qr(directions.T)
        directions = q.T[:classes]
    else:
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), per_class)
    inputs = separation * directions[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(inputs[order], one_hot(labels[order], classes), labels[order])


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """n rows drawn uniformly without replacement."""
    if n < 1:
        raise DomainError(f"subset size must be >= 1, got {n}")
    if n > dataset.n:
        raise DomainError(f"subset size {n} exceeds dataset size {dataset.n}")
    rng = np.random.default_rng(seed)
    return dataset.take(rng.choice(dataset.n, size=n, replace=False))


def split(dataset: Dataset, holdout: int, seed: int) -> tuple[Dataset, Dataset]:
    """(train, held-out) with `holdout` rows reserved for diagnostics."""
    if not 0 < holdout < dataset.n:
        raise DomainError(f"held-out size must be in (0, {dataset.n}), got {holdout}")
    order = np.random.default_rng(seed).permutation(dataset.n)
    return dataset.take(order[holdout:]), dataset.take(order[:holdout])
