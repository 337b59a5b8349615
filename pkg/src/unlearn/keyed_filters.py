"""Private class-wise blur filters.

Each class gets a ``k x k`` filter in which one uniformly chosen cell is
exactly 1.0 and the remaining cells are drawn from ``U[0, p_b)``. Filters
are a pure function of ``(master_seed, class index, k, p_b)``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .rng import SplitMix64, derive_seed

BANK_MAGIC = b"CUDAFB1\0"
_HEADER = struct.Struct("<8sIIdQ")


@dataclass(frozen=True)
class FilterSpec:
    num_classes: int
    kernel_size: int
    blur: float
    master_seed: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        _check_kernel(self.kernel_size, self.blur)
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


def _check_kernel(k: int, p_b: float) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {k}")
    if not p_b >= 0:
        raise ValueError(f"blur parameter must be non-negative, got {p_b}")


@dataclass(frozen=True, eq=False)
class FilterBank:
    spec: FilterSpec
    filters: np.ndarray  # (K, k, k) float64, read-only
    permutation: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        k = self.spec.kernel_size
        if self.filters.shape != (self.spec.num_classes, k, k):
            raise ValueError("filter array shape does not match spec")
        self.filters.setflags(write=False)

    def __len__(self):
        return self.spec.num_classes

    def __getitem__(self, label: int) -> np.ndarray:
        return self.filters[label]

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.filters, other.filters)

    def to_bytes(self) -> bytes:
        s = self.spec
        head = _HEADER.pack(BANK_MAGIC, s.num_classes, s.kernel_size, s.blur, s.master_seed)
        return head + self.filters.astype("<f8").tobytes()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_json(self) -> str:
        s = self.spec
        doc = {
            "num_classes": s.num_classes,
            "kernel_size": s.kernel_size,
            "blur": s.blur,
            "master_seed": s.master_seed,
            "permutation": list(self.permutation) if self.permutation else None,
            "fingerprint": self.fingerprint(),
            "filters": self.filters.tolist(),
        }
        return json.dumps(doc, indent=2)


def generate_filter(class_seed: int, k: int, p_b: float) -> np.ndarray:
    """One keyed filter. The unit cell is drawn before the uniform fill."""
    _check_kernel(k, p_b)
    rng = SplitMix64(class_seed)
    unit = int(rng.integers(k * k, 1)[0])
    fill = rng.uniform(0.0, p_b, k * k - 1)
    # guards the p_b = 1 edge where ``low + span * u`` could round up to 1.0
    fill = np.where(fill >= p_b, np.nextafter(p_b, 0.0), fill) if p_b > 0 else fill
    values = np.insert(fill, unit, 1.0)
    return values.reshape(k, k)


def generate_bank(spec: FilterSpec) -> FilterBank:
    filters = np.stack([
        generate_filter(derive_seed(spec.master_seed, i), spec.kernel_size, spec.blur)
        for i in range(spec.num_classes)
    ])
    return FilterBank(spec, filters)


def identity_bank(num_classes: int) -> FilterBank:
    """Bank of 1x1 unit filters (poisoning becomes a max-rescale only)."""
    spec = FilterSpec(num_classes, 1, 0.0, 0)
    return FilterBank(spec, np.ones((num_classes, 1, 1)))


def permute_bank(bank: FilterBank, perm: Sequence[int]) -> FilterBank:
    """Class ``i`` of the result uses the input filter of class ``perm[i]``."""
    perm = [int(p) for p in perm]
    K = len(bank)
    if sorted(perm) != list(range(K)):
        raise ValueError("perm must be a bijection on range(num_classes)")
    prior = bank.permutation or tuple(range(K))
    composed = tuple(prior[p] for p in perm)
    return FilterBank(bank.spec, bank.filters[perm].copy(), composed)


def cyclic_permutation(num_classes: int, shift: int = 1) -> list[int]:
    return [(i + shift) % num_classes for i in range(num_classes)]


def bank_from_bytes(data: bytes) -> FilterBank:
    if len(data) < _HEADER.size:
        raise FormatError("bank file shorter than header", offset=len(data))
    magic, K, k, p_b, seed = _HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}", offset=0)
    if K < 1 or k < 1 or k % 2 == 0:
        raise FormatError(f"invalid bank dimensions K={K} k={k}", offset=8)
    expected = _HEADER.size + 8 * K * k * k
    if len(data) != expected:
        raise FormatError(f"bank payload size mismatch: expected {expected} bytes, got {len(data)}",
                          offset=min(len(data), expected))
    filters = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(K, k, k)
    try:
        spec = FilterSpec(K, k, p_b, seed)
    except ValueError as exc:
        raise FormatError(str(exc), offset=16) from None
    return FilterBank(spec, filters.astype(np.float64))


def save_bank(bank: FilterBank, path) -> None:
    Path(path).write_bytes(bank.to_bytes())


def load_bank(path) -> FilterBank:
    return bank_from_bytes(Path(path).read_bytes())
