"""Class-wise convolution poisoning and the related control transforms.

Convolution here is zero-padded "same" cross-correlation with a centered
anchor, applied to every channel with the same 2D filter. Poisoned images
are divided by their global maximum so that the brightest pixel is 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import chunk_bounds, resolve_threads, run_indexed
from .dataset_io import LabeledDataset
from .keyed_filters import FilterBank, generate_filter
from .rng import SplitMix64, derive_seed


def _check_filter(filt: np.ndarray) -> np.ndarray:
    filt = np.asarray(filt, dtype=np.float64)
    if filt.ndim != 2 or filt.shape[0] != filt.shape[1] or filt.shape[0] % 2 == 0:
        raise ValueError(f"filter must be square with odd size, got shape {filt.shape}")
    return filt


def convolve_same(images: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Cross-correlate the last two axes of ``images`` with ``filt``.

    Accepts any leading shape, ``(H, W)``, ``(C, H, W)`` or ``(n, C, H, W)``.
    The output has the input shape and float64 dtype; it is accumulated as
    ``k*k`` shifted slices of a zero-padded copy.
    """
    filt = _check_filter(filt)
    x = np.asarray(images, dtype=np.float64)
    k = filt.shape[0]
    r = k // 2
    if r == 0:
        return x * filt[0, 0]
    H, W = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad)
    out = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            w = filt[u, v]
            if w != 0.0:
                out += w * xp[..., u:u + H, v:v + W]
    return out


def rescale_max(images: np.ndarray, per_image_axes: int = 3) -> np.ndarray:
    """Divide each image by its global max over channels and pixels.

    The trailing ``per_image_axes`` axes form one image; all-zero images are
    returned unchanged.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.size and x.min() < 0:
        raise ValueError("rescale_max requires non-negative pixels")
    axes = tuple(range(x.ndim - per_image_axes, x.ndim))
    peak = x.max(axis=axes, keepdims=True) if x.size else np.ones((1,) * x.ndim)
    safe = np.where(peak > 0, peak, 1.0)
    return x / safe


def cuda_poison_image(image: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Poison one ``(C, H, W)`` image (or a 2D plane)."""
    image = np.asarray(image)
    return rescale_max(convolve_same(image, filt), per_image_axes=min(3, image.ndim))


def _poison_block(images: np.ndarray, filt: np.ndarray, threads: int) -> np.ndarray:
    """Poison ``(n, C, H, W)`` images with one filter, chunked by index."""
    out = np.empty(images.shape, dtype=np.float32)

    def work(lo, hi):
        def run():
            out[lo:hi] = rescale_max(convolve_same(images[lo:hi], filt))
        return run

    run_indexed([work(lo, hi) for lo, hi in chunk_bounds(len(images), 4 * threads)], threads)
    return out


@dataclass(frozen=True, eq=False)
class PoisonMask:
    flags: np.ndarray
    fraction: float
    seed: int

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    def per_class(self, labels: np.ndarray, num_classes: int) -> list[int]:
        return [int(c) for c in np.bincount(labels[self.flags], minlength=num_classes)]

    def to_dict(self, labels: np.ndarray, num_classes: int) -> dict:
        totals = np.bincount(labels, minlength=num_classes)
        per_class = self.per_class(labels, num_classes)
        return {
            "fraction": self.fraction,
            "seed": self.seed,
            "n": int(self.flags.size),
            "poisoned": self.count,
            "per_class_poisoned": per_class,
            "per_class_total": [int(t) for t in totals],
            "per_class_fraction": [p / t if t else 0.0 for p, t in zip(per_class, totals)],
            "poisoned_indices": [int(i) for i in np.flatnonzero(self.flags)],
        }


def _check_labels(dataset: LabeledDataset, bank: FilterBank) -> None:
    if len(dataset) and dataset.labels.max() >= len(bank):
        raise ValueError(
            f"label {int(dataset.labels.max())} has no filter in a bank of {len(bank)} classes")


def stratified_mask(labels: np.ndarray, num_classes: int, fraction: float, seed: int) -> np.ndarray:
    """Pick ``floor(fraction * n_c)`` samples of every class ``c``."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    flags = np.zeros(labels.shape[0], dtype=bool)
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        take = int(np.floor(fraction * members.size + 1e-9))
        if take:
            order = SplitMix64(derive_seed(seed, c)).permutation(members.size)
            flags[members[order[:take]]] = True
    return flags


def poison_dataset(dataset: LabeledDataset, bank: FilterBank, fraction: float = 1.0,
                   seed: int = 0, threads: int | None = None) -> tuple[LabeledDataset, PoisonMask]:
    _check_labels(dataset, bank)
    threads = resolve_threads(threads)
    flags = stratified_mask(dataset.labels, dataset.num_classes, fraction, seed)
    mask = PoisonMask(flags, float(fraction), int(seed))
    if not flags.any():
        return dataset.replace(images=dataset.images.copy()), mask
    images = dataset.images.copy()
    for c in range(len(bank)):
        idx = np.flatnonzero(flags & (dataset.labels == c))
        if idx.size:
            images[idx] = _poison_block(dataset.images[idx], bank[c], threads)
    kind = "poisoned" if flags.all() else "mixed"
    return dataset.replace(images=images, provenance=f"{kind}:{bank.fingerprint()[:16]}"), mask


def poison_testset(dataset: LabeledDataset, bank: FilterBank, threads: int | None = None) -> LabeledDataset:
    """Poison every image with the filter of its own label."""
    _check_labels(dataset, bank)
    threads = resolve_threads(threads)
    images = dataset.images.copy()
    for c in range(len(bank)):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size:
            images[idx] = _poison_block(dataset.images[idx], bank[c], threads)
    return dataset.replace(images=images, provenance=f"poisoned:{bank.fingerprint()[:16]}")


def universal_blur(dataset: LabeledDataset, filt: np.ndarray, threads: int | None = None) -> LabeledDataset:
    """Poison every image with one shared filter regardless of class."""
    filt = _check_filter(filt)
    images = _poison_block(dataset.images, filt, resolve_threads(threads)) if len(dataset) else dataset.images.copy()
    return dataset.replace(images=images, provenance="universal-blur")


def random_blur_augment(batch: np.ndarray, blur: float, k: int, seed: int) -> np.ndarray:
    """Blur a whole batch with one freshly drawn keyed filter, then rescale."""
    filt = generate_filter(seed, k, blur)
    return rescale_max(convolve_same(batch, filt)).astype(np.float32)


def grayscale(dataset: LabeledDataset) -> LabeledDataset:
    """Replace every pixel by its mean over channels (output has one channel)."""
    if dataset.shape[0] == 1:
        return dataset.replace(images=dataset.images.copy())
    gray = dataset.images.astype(np.float64).mean(axis=1, keepdims=True)
    return dataset.replace(images=gray.astype(np.float32), provenance=dataset.provenance + "+gray")
