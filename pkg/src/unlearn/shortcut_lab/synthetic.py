"""Synthetic 10-class image task: smooth class templates plus nuisance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset_io import LabeledDataset
from ..poison_engine import convolve_same
from ..rng import SplitMix64, derive_seed


def _smooth_field(rng: SplitMix64, n: int, shape, passes: int) -> np.ndarray:
    box = np.full((3, 3), 1.0 / 9.0)
    x = rng.normal(n * int(np.prod(shape))).reshape((n,) + tuple(shape))
    for _ in range(passes):
        x = convolve_same(x, box)
    x -= x.mean(axis=(-2, -1), keepdims=True)
    x /= x.std(axis=(-2, -1), keepdims=True) + 1e-12
    return x


@dataclass(frozen=True)
class TemplateTask:
    num_classes: int = 10
    shape: tuple[int, int, int] = (3, 16, 16)
    # Calibrated so the semantic signal is learnable but weaker than a class-wise
    # blur: smooth templates survive a 3x3 blur, white noise does not.
    template_strength: float = 0.05
    background_strength: float = 0.13
    noise: float = 0.13
    smoothness: int = 10


def make_template_task(task: TemplateTask, per_class_train: int, per_class_test: int,
                       seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Return ``(train, test)`` drawn from one shared set of class templates."""
    templates = _smooth_field(SplitMix64(derive_seed(seed, 0)), task.num_classes, task.shape, task.smoothness)

    def draw(per_class, stream):
        rng = SplitMix64(derive_seed(seed, stream))
        n = per_class * task.num_classes
        labels = np.repeat(np.arange(task.num_classes), per_class)
        order = rng.permutation(n)
        labels = labels[order]
        bg = _smooth_field(rng, n, task.shape, task.smoothness)
        noise = rng.normal(n * int(np.prod(task.shape))).reshape((n,) + task.shape)
        x = (0.5 + task.template_strength * templates[labels]
             + task.background_strength * bg + task.noise * noise)
        return LabeledDataset(np.clip(x, 0.0, 1.0).astype(np.float32), labels, task.num_classes)

    return draw(per_class_train, 1), draw(per_class_test, 2)
