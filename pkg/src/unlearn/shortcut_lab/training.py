"""ERM training, evaluation and deconvolution-based adversarial training."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..dataset_io import LabeledDataset
from ..errors import DivergenceError
from ..poison_engine import convolve_same
from ..rng import SplitMix64, derive_seed
from .models import ClassifierModel, SGDMomentum

_INIT, _SHUFFLE, _HOOK = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    lr_decay_at: tuple[float, ...] = (0.4, 0.8)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def lr_at(self, epoch: int) -> float:
        drops = sum(epoch >= math.floor(f * self.epochs) for f in self.lr_decay_at)
        return self.lr * self.lr_decay ** drops

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class DATConfig:
    kernel_size: int = 3
    clamp: float = 5.0
    steps: int = 10
    inner_lr: float = 0.1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("deconvolution kernel size must be odd")
        if self.clamp < 0:
            raise ValueError("clamp must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


BatchHook = Callable[[np.ndarray, np.ndarray, int, ClassifierModel], np.ndarray]


def evaluate(model: ClassifierModel, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        return math.nan
    if tuple(dataset.shape) != model.input_shape:
        raise ValueError(f"dataset shape {dataset.shape} does not match model input {model.input_shape}")
    preds = np.concatenate([model.predict(dataset.images[i:i + 4096])
                            for i in range(0, len(dataset), 4096)])
    return float(np.mean(preds == dataset.labels))


def _fit(dataset: LabeledDataset, arch: str, config: TrainConfig, batch_hook: BatchHook | None = None,
         eval_set: LabeledDataset | None = None):
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = ClassifierModel.init(arch, dataset.shape, dataset.num_classes,
                                 derive_seed(config.seed, _INIT), config.hidden)
    opt = SGDMomentum(model.params, config.momentum, config.weight_decay)
    shuffle_root = derive_seed(config.seed, _SHUFFLE)
    hook_root = derive_seed(config.seed, _HOOK)
    n = len(dataset)
    trace = []
    step = 0
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = SplitMix64(derive_seed(shuffle_root, epoch)).permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y = dataset.images[idx], dataset.labels[idx]
            if batch_hook is not None:
                x = batch_hook(x, y, derive_seed(hook_root, step), model)
            loss, grads, _ = model.loss_and_grads(x, y)
            if not math.isfinite(loss):
                raise DivergenceError("non-finite training loss", epoch)
            opt.step(grads, lr)
            total += loss * len(idx)
            step += 1
        entry = {"epoch": epoch, "lr": lr, "train_loss": total / n}
        if eval_set is not None:
            entry["test_acc"] = evaluate(model, eval_set)
        trace.append(entry)
    return model, trace


def train(dataset: LabeledDataset, arch: str = "mlp", config: TrainConfig = TrainConfig(),
          batch_hook: BatchHook | None = None) -> ClassifierModel:
    """Minimize mean softmax cross-entropy with momentum SGD.

    ``batch_hook(x, y, seed, model)`` may transform every mini-batch before
    the gradient step; ``seed`` is unique to that step.
    """
    return _fit(dataset, arch, config, batch_hook)[0]


def train_with_trace(dataset, arch="mlp", config=TrainConfig(), batch_hook=None, eval_set=None):
    return _fit(dataset, arch, config, batch_hook, eval_set)


# -- deconvolution (transpose convolution) -------------------------------------

def deconvolve(images: np.ndarray, filt: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """Adjoint of :func:`convolve_same` with ``filt``, plus a scalar bias."""
    filt = np.asarray(filt, dtype=np.float64)
    return convolve_same(images, filt[::-1, ::-1]) + bias


def deconvolve_filter_grad(images: np.ndarray, upstream: np.ndarray, k: int) -> np.ndarray:
    """``d sum(upstream * deconvolve(images, s)) / d s`` (a ``k x k`` array)."""
    x = np.asarray(images, dtype=np.float64)
    r = k // 2
    H, W = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad)
    grad = np.empty((k, k))
    for u in range(k):
        for v in range(k):
            # output pixel (i, j) reads input pixel (i - u + r, j - v + r)
            window = xp[..., 2 * r - u:2 * r - u + H, 2 * r - v:2 * r - v + W]
            grad[u, v] = float(np.sum(upstream * window))
    return grad


def identity_kernel(k: int) -> np.ndarray:
    s = np.zeros((k, k))
    s[k // 2, k // 2] = 1.0
    return s


def rescale_unit(images: np.ndarray) -> np.ndarray:
    """Affinely map every image to ``[0, 1]`` (constant images become 0)."""
    x = np.asarray(images, dtype=np.float64)
    axes = tuple(range(1, x.ndim))
    lo = x.min(axis=axes, keepdims=True)
    span = x.max(axis=axes, keepdims=True) - lo
    return np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)


def deconv_patches(images: np.ndarray, k: int) -> np.ndarray:
    """``(n, C*H*W, k*k)`` patch matrix ``P`` with ``deconvolve(x, s) == P @ s.ravel()``."""
    x = np.asarray(images, dtype=np.float64)
    r = k // 2
    n = len(x)
    H, W = x.shape[-2:]
    xp = np.pad(x, [(0, 0), (0, 0), (r, r), (r, r)])
    P = np.empty((n, x[0].size, k * k))
    for u in range(k):
        for v in range(k):
            P[:, :, u * k + v] = xp[..., 2 * r - u:2 * r - u + H, 2 * r - v:2 * r - v + W].reshape(n, -1)
    return P


def deconvolve_labelwise(images: np.ndarray, labels: np.ndarray, filters: np.ndarray,
                         biases: np.ndarray, patches: np.ndarray | None = None) -> np.ndarray:
    """Deconvolve sample ``i`` with ``filters[labels[i]]`` plus ``biases[labels[i]]``.

    Batched equivalent of calling :func:`deconvolve` once per class.
    """
    x = np.asarray(images)
    k = filters.shape[-1]
    P = deconv_patches(x, k) if patches is None else patches
    per_sample = np.asarray(filters, dtype=np.float64).reshape(len(filters), -1)[labels]
    out = np.matmul(P, per_sample[:, :, None])[:, :, 0]
    out += np.asarray(biases, dtype=np.float64)[labels][:, None]
    return out.reshape(x.shape)


def dat_objective(model: ClassifierModel, images: np.ndarray, labels: np.ndarray,
                  filters: np.ndarray, biases: np.ndarray, patches: np.ndarray | None = None):
    """Summed cross-entropy of deconvolved images and its filter gradients.

    ``filters`` is ``(K, k, k)`` and ``biases`` is ``(K,)``; sample ``i`` is
    deconvolved with the filter of its label. ``patches`` may carry a cached
    :func:`deconv_patches` of ``images``.
    """
    k = filters.shape[-1]
    P = deconv_patches(images, k) if patches is None else patches
    adv = deconvolve_labelwise(images, labels, filters, biases, P)
    loss, _, gin = model.loss_and_grads(adv, labels, reduction="sum", want_input=True)
    up = gin.reshape(len(gin), -1)
    per_sample = np.matmul(up[:, None, :], P)[:, 0, :]
    gf = np.zeros((len(filters), k * k))
    np.add.at(gf, labels, per_sample)
    gb = np.zeros(len(biases))
    np.add.at(gb, labels, up.sum(axis=1))
    return loss, gf.reshape(filters.shape), gb


def dat_inner_max(model: ClassifierModel, images, labels, num_classes: int, dat: DATConfig,
                  patches: np.ndarray | None = None):
    """Projected gradient ascent on per-class deconvolution filters.

    Filters start at the identity kernel and biases at 0. With ``clamp == 0``
    they stay frozen there. Returns the final ``(filters, biases)``.
    """
    k = dat.kernel_size
    filters = np.repeat(identity_kernel(k)[None], num_classes, axis=0)
    biases = np.zeros(num_classes)
    if dat.clamp == 0:
        return filters, biases
    if patches is None:
        patches = deconv_patches(images, k)
    for _ in range(dat.steps):
        _, gf, gb = dat_objective(model, images, labels, filters, biases, patches)
        filters = np.clip(filters + dat.inner_lr * gf, -dat.clamp, dat.clamp)
        biases = np.clip(biases + dat.inner_lr * gb, -dat.clamp, dat.clamp)
    return filters, biases


def dat_train(cuda_train: LabeledDataset, clean_test: LabeledDataset, arch: str = "mlp",
              config: TrainConfig = TrainConfig(), dat: DATConfig = DATConfig()):
    """Train against class-wise error-maximizing deconvolutions.

    Each mini-batch is deconvolved with filters found by :func:`dat_inner_max`,
    rescaled to ``[0, 1]`` per image, and used for one descent step.
    Returns the model and a per-epoch trace with clean-test accuracy.
    """
    K = cuda_train.num_classes

    def hook(x, y, seed, model):
        patches = deconv_patches(x, dat.kernel_size)
        filters, biases = dat_inner_max(model, x, y, K, dat, patches)
        return rescale_unit(deconvolve_labelwise(x, y, filters, biases, patches))

    return _fit(cuda_train, arch, config, hook, clean_test)
