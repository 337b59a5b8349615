"""Labeled image datasets and their on-disk formats.

Images are held as one ``float32`` array of shape ``(n, channels, height,
width)`` with values in ``[0, 1]``. Two external formats are supported:

* CIFAR-10/100 binary batches (label byte(s) followed by 3072 pixel bytes,
  red/green/blue planes, row-major);
* ``UDS``, a lossless little-endian container defined by :func:`write_uds`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError

UDS_MAGIC = b"CUDADS1\0"
_UDS_HEADER = struct.Struct("<8sIIIIQI")  # magic, C, H, W, K, n, provenance length
_MAX_DIM = 1 << 16

CIFAR_PIXELS = 3 * 32 * 32


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "clean"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError("images and labels differ in length")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.images[index], self.labels[index], self.num_classes, self.provenance)

    def replace(self, images=None, provenance=None) -> "LabeledDataset":
        return LabeledDataset(
            self.images if images is None else images,
            self.labels,
            self.num_classes,
            self.provenance if provenance is None else provenance,
        )

    def identical_to(self, other: "LabeledDataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.provenance == other.provenance
            and self.images.shape == other.images.shape
            and self.images.tobytes() == other.images.tobytes()
            and np.array_equal(self.labels, other.labels)
        )


def read_cifar_binary(paths: Iterable, fine_labels: bool = False) -> LabeledDataset:
    """Read CIFAR binary batch files.

    ``fine_labels=False`` parses CIFAR-10 (1 label byte, K=10); ``True``
    parses CIFAR-100 (coarse byte then fine byte, fine label kept, K=100).
    """
    label_bytes, K = (2, 100) if fine_labels else (1, 10)
    record = label_bytes + CIFAR_PIXELS
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % record:
            whole = len(raw) // record * record
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of {record}", offset=whole)
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        lab = rows[:, label_bytes - 1].astype(np.int64)
        bad = np.flatnonzero(lab >= K)
        if bad.size:
            raise FormatError(f"{path}: label byte {lab[bad[0]]} exceeds {K - 1}",
                              offset=int(bad[0]) * record + label_bytes - 1)
        images.append(rows[:, label_bytes:].reshape(-1, 3, 32, 32))
        labels.append(lab)
    if images:
        pix = np.concatenate(images).astype(np.float32) / np.float32(255.0)
        lab = np.concatenate(labels)
    else:
        pix, lab = np.zeros((0, 3, 32, 32), np.float32), np.zeros(0, np.int64)
    return LabeledDataset(pix, lab, K, "clean")


def quantize_u8(images: np.ndarray) -> np.ndarray:
    """8-bit export: ``round(p * 255)``, clipped to the byte range."""
    return np.clip(np.rint(np.asarray(images, np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_cifar_binary(dataset: LabeledDataset, path, fine_labels: bool = False) -> None:
    if dataset.shape != (3, 32, 32):
        raise ValueError("CIFAR binary requires 3x32x32 images")
    n = len(dataset)
    label_bytes = 2 if fine_labels else 1
    out = np.zeros((n, label_bytes + CIFAR_PIXELS), dtype=np.uint8)
    out[:, label_bytes - 1] = dataset.labels.astype(np.uint8)
    out[:, label_bytes:] = quantize_u8(dataset.images).reshape(n, -1)
    Path(path).write_bytes(out.tobytes())


def uds_bytes(dataset: LabeledDataset) -> bytes:
    n = len(dataset)
    C, H, W = dataset.shape
    if dataset.num_classes > 0xFFFF + 1:
        raise ValueError("UDS stores labels as 16-bit integers")
    prov = dataset.provenance.encode("utf-8")
    head = _UDS_HEADER.pack(UDS_MAGIC, C, H, W, dataset.num_classes, n, len(prov))
    return b"".join([
        head,
        prov,
        dataset.images.astype("<f4").tobytes(),
        dataset.labels.astype("<u2").tobytes(),
    ])


def write_uds(dataset: LabeledDataset, path) -> None:
    Path(path).write_bytes(uds_bytes(dataset))


def uds_from_bytes(data: bytes) -> LabeledDataset:
    if len(data) < _UDS_HEADER.size:
        raise FormatError("file shorter than UDS header", offset=len(data))
    magic, C, H, W, K, n, plen = _UDS_HEADER.unpack_from(data)
    if magic != UDS_MAGIC:
        raise FormatError(f"bad UDS magic {magic!r}", offset=0)
    if not (0 < C <= _MAX_DIM and 0 < H <= _MAX_DIM and 0 < W <= _MAX_DIM and 0 < K <= 0xFFFF + 1):
        raise FormatError(f"UDS dimensions out of range C={C} H={H} W={W} K={K}", offset=8)
    pix_off = _UDS_HEADER.size + plen
    pix_bytes = 4 * n * C * H * W
    expected = pix_off + pix_bytes + 2 * n
    if len(data) != expected:
        raise FormatError(f"UDS size mismatch: header implies {expected} bytes, file has {len(data)}",
                          offset=min(len(data), expected))
    try:
        prov = data[_UDS_HEADER.size:pix_off].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("provenance is not valid UTF-8", offset=_UDS_HEADER.size) from None
    images = np.frombuffer(data, "<f4", count=n * C * H * W, offset=pix_off).reshape(n, C, H, W)
    labels = np.frombuffer(data, "<u2", count=n, offset=pix_off + pix_bytes).astype(np.int64)
    if n and labels.max() >= K:
        raise FormatError(f"label {labels.max()} outside [0, {K})", offset=pix_off + pix_bytes)
    return LabeledDataset(images.astype(np.float32), labels, K, prov)


def read_uds(path) -> LabeledDataset:
    return uds_from_bytes(Path(path).read_bytes())


def dataset_summary(dataset: LabeledDataset) -> dict:
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    summary = {
        "n": len(dataset),
        "shape": list(dataset.shape),
        "num_classes": dataset.num_classes,
        "provenance": dataset.provenance,
        "class_counts": [int(c) for c in counts],
    }
    if len(dataset):
        per_image_max = dataset.images.reshape(len(dataset), -1).max(axis=1)
        summary.update(
            pixel_min=float(dataset.images.min()),
            pixel_max=float(dataset.images.max()),
            pixel_mean=float(dataset.images.mean(dtype=np.float64)),
            image_max_min=float(per_image_max.min()),
            image_max_max=float(per_image_max.max()),
        )
    else:
        summary.update(pixel_min=0.0, pixel_max=0.0, pixel_mean=0.0)
    return summary
