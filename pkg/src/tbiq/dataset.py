"""Labeled image sets and the binary ``TBIQ`` dataset file."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .pipeline import atomic_write

DATASET_MAGIC = b"TBIQ"
DATASET_VERSION = 1
# magic, version, count, height, width
_HEADER = struct.Struct("<4sIIII")


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed or truncated."""


@dataclass
class ImageSet:
    images: np.ndarray
    labels: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if self.images.ndim != 3:
            raise ValueError(f"ImageSet images must be (n, height, width), got {self.images.shape}.")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"ImageSet has {self.images.shape[0]} images but {self.labels.shape[0]} labels."
            )
        bad = set(np.unique(self.labels).tolist()) - {0, 1}
        if bad:
            raise ValueError(f"Labels must be 0 or 1, got {sorted(bad)}.")
        if self.ids is None:
            self.ids = np.arange(self.images.shape[0], dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.images.shape[1]), int(self.images.shape[2])

    def class_images(self, label: int) -> np.ndarray:
        return self.images[self.labels == label]

    def subset(self, index: np.ndarray) -> "ImageSet":
        return ImageSet(self.images[index], self.labels[index], self.ids[index])

    def with_images(self, images: np.ndarray) -> "ImageSet":
        return ImageSet(images, self.labels.copy(), self.ids.copy())

    @staticmethod
    def concat(parts: list["ImageSet"]) -> "ImageSet":
        if not parts:
            raise ValueError("Cannot concatenate an empty list of image sets.")
        return ImageSet(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )


def dataset_header_size(count: int) -> int:
    """Fixed header plus one label byte per image."""
    return _HEADER.size + int(count)


def save_dataset(path: str | Path, images: np.ndarray, labels: np.ndarray) -> Path:
    path = Path(path)
    data = np.asarray(images)
    if data.ndim != 3:
        raise ValueError(f"images must be (n, height, width), got {data.shape}.")
    label_arr = np.asarray(labels).reshape(-1)
    if label_arr.shape[0] != data.shape[0]:
        raise ValueError(f"{data.shape[0]} images but {label_arr.shape[0]} labels.")
    count, height, width = (int(v) for v in data.shape)
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, count, height, width)
    payload = np.ascontiguousarray(data, dtype="<f4")

    def _write(tmp_path: Path) -> None:
        with tmp_path.open("wb") as handle:
            handle.write(header)
            handle.write(label_arr.astype(np.uint8).tobytes())
            handle.write(payload.tobytes())

    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, _write)
    return path


def load_dataset(path: str | Path) -> ImageSet:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file too short for a dataset header.")
    magic, version, count, height, width = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}.")
    if version != DATASET_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported dataset version {version}, expected {DATASET_VERSION}."
        )
    expected = dataset_header_size(count) + count * height * width * 4
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: payload length {len(raw)} bytes does not match header ({expected} bytes)."
        )
    offset = _HEADER.size
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).astype(np.int8)
    offset += count
    images = np.frombuffer(raw, dtype="<f4", count=count * height * width, offset=offset)
    images = images.reshape(count, height, width).astype(np.float32)
    return ImageSet(images, labels)
