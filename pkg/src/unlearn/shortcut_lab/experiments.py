"""Desk-scale shortcut diagnostics built from train/evaluate."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from ..dataset_io import LabeledDataset
from ..keyed_filters import (FilterBank, FilterSpec, cyclic_permutation, generate_bank,
                             generate_filter, permute_bank)
from ..poison_engine import (grayscale, poison_dataset, poison_testset, random_blur_augment,
                             universal_blur)
from ..reports import ExperimentReport
from ..rng import derive_seed
from .training import DATConfig, TrainConfig, dat_train, evaluate, train, train_with_trace


def _bank_params(bank: FilterBank) -> dict:
    return {**asdict(bank.spec), "fingerprint": bank.fingerprint()}


def universal_filter(bank: FilterBank) -> np.ndarray:
    """One filter drawn like the bank's but shared by every class.

    Uses the derivation stream just past the last class, so it is keyed by the
    same master seed and never coincides with a class filter's stream.
    """
    s = bank.spec
    return generate_filter(derive_seed(s.master_seed, s.num_classes), s.kernel_size, s.blur)


def shortcut_report(clean_train: LabeledDataset, clean_test: LabeledDataset, bank: FilterBank,
                    arch: str = "mlp", config: TrainConfig = TrainConfig(),
                    threads: int | None = None) -> ExperimentReport:
    """Clean baseline vs. a model trained on the fully poisoned train set.

    The poisoned model is scored on clean test images, on test images blurred
    with their own class filter, and with a cyclically shifted bank. A
    universal-blur model is the control showing blur alone is harmless.
    """
    baseline_model = train(clean_train, arch, config)
    baseline = evaluate(baseline_model, clean_test)

    poisoned, _ = poison_dataset(clean_train, bank, 1.0, threads=threads)
    model = train(poisoned, arch, config)
    permuted = permute_bank(bank, cyclic_permutation(bank.spec.num_classes))
    metrics = {
        "baseline": baseline,
        "clean_test": evaluate(model, clean_test),
        "cuda_test": evaluate(model, poison_testset(clean_test, bank, threads)),
        "permuted_test": evaluate(model, poison_testset(clean_test, permuted, threads)),
    }
    ub_train = universal_blur(clean_train, universal_filter(bank), threads)
    metrics["universal_blur"] = evaluate(train(ub_train, arch, config), clean_test)
    metrics["clean_drop"] = baseline - metrics["clean_test"]
    metrics["universal_gap"] = baseline - metrics["universal_blur"]
    rows = [[k, metrics[k]] for k in ("baseline", "clean_test", "cuda_test", "permuted_test",
                                       "universal_blur")]
    return ExperimentReport(
        "shortcut",
        {"arch": arch, "train": asdict(config), "bank": _bank_params(bank)},
        ["measure", "accuracy"], rows, metrics)


def protection_sweep(clean_train: LabeledDataset, clean_test: LabeledDataset, bank: FilterBank,
                     fractions=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0), arch: str = "mlp",
                     config: TrainConfig = TrainConfig(), mask_seed: int = 0,
                     threads: int | None = None) -> ExperimentReport:
    """Clean-test accuracy when a stratified fraction of training data is poisoned.

    ``mixed`` trains on poisoned plus untouched samples; ``clean_only`` trains
    on the untouched complement alone (``None`` when it is empty).
    """
    rows = []
    for f in fractions:
        mixed, mask = poison_dataset(clean_train, bank, f, mask_seed, threads)
        mixed_acc = evaluate(train(mixed, arch, config), clean_test)
        keep = np.flatnonzero(~mask.flags)
        clean_acc = None
        if keep.size:
            clean_acc = evaluate(train(clean_train.subset(keep), arch, config), clean_test)
        rows.append([float(f), mixed_acc, clean_acc, int(mask.count)])
    metrics = {"mixed": [r[1] for r in rows], "clean_only": [r[2] for r in rows]}
    return ExperimentReport(
        "protection",
        {"arch": arch, "train": asdict(config), "bank": _bank_params(bank), "mask_seed": mask_seed},
        ["fraction", "mixed_acc", "clean_only_acc", "poisoned_count"], rows, metrics)


def dat_sweep(clean_train: LabeledDataset, clean_test: LabeledDataset, blurs=(0.3, 0.1),
              kernel_sizes=(3, 5, 7), bank_kernel: int = 3, bank_seed: int = 1,
              arch: str = "mlp", config: TrainConfig = TrainConfig(), dat: DATConfig = DATConfig(),
              threads: int | None = None) -> ExperimentReport:
    """DAT against banks of several blur levels and deconvolution sizes.

    ``recovered`` is the fraction of the ERM-to-baseline gap closed by DAT.
    """
    K = clean_train.num_classes
    baseline = evaluate(train(clean_train, arch, config), clean_test)
    rows, traces = [], {}
    for pb in blurs:
        bank = generate_bank(FilterSpec(K, bank_kernel, pb, bank_seed))
        poisoned, _ = poison_dataset(clean_train, bank, 1.0, threads=threads)
        erm = evaluate(train(poisoned, arch, config), clean_test)
        for k in kernel_sizes:
            cfg = DATConfig(k, dat.clamp, dat.steps, dat.inner_lr)
            model, trace = dat_train(poisoned, clean_test, arch, config, cfg)
            acc = evaluate(model, clean_test)
            gap = baseline - erm
            recovered = (acc - erm) / gap if gap > 0 else float("nan")
            rows.append([float(pb), int(k), erm, acc, recovered])
            traces[f"pb={pb},k={k}"] = trace
    return ExperimentReport(
        "dat",
        {"arch": arch, "train": asdict(config), "dat": asdict(dat), "bank_kernel": bank_kernel,
         "bank_seed": bank_seed},
        ["blur", "deconv_k", "erm_acc", "dat_acc", "recovered"], rows,
        {"baseline": baseline}, traces)


def grayscale_check(clean_train: LabeledDataset, clean_test: LabeledDataset, bank: FilterBank,
                    arch: str = "mlp", config: TrainConfig = TrainConfig(),
                    threads: int | None = None) -> ExperimentReport:
    """Grayscale the poisoned train set and the clean test set before training."""
    gray_test = grayscale(clean_test)
    baseline = evaluate(train(grayscale(clean_train), arch, config), gray_test)
    poisoned, _ = poison_dataset(clean_train, bank, 1.0, threads=threads)
    acc = evaluate(train(grayscale(poisoned), arch, config), gray_test)
    metrics = {"gray_baseline": baseline, "gray_cuda": acc, "drop": baseline - acc}
    return ExperimentReport(
        "grayscale", {"arch": arch, "train": asdict(config), "bank": _bank_params(bank)},
        ["measure", "accuracy"], [["gray_baseline", baseline], ["gray_cuda", acc]], metrics)


def random_blur_defense_check(cuda_train: LabeledDataset, clean_test: LabeledDataset,
                              blurs=(0.1, 0.3), kernel_size: int = 3, arch: str = "mlp",
                              config: TrainConfig = TrainConfig(),
                              baseline: float | None = None) -> ExperimentReport:
    """Train on poisoned data blurred by a fresh random filter every batch.

    With no blur levels the report holds one plain ERM row (``blur = None``).
    """
    rows = []
    if not blurs:
        rows.append([None, evaluate(train(cuda_train, arch, config), clean_test)])
    for pb in blurs:
        def hook(x, y, seed, model, pb=pb):
            return random_blur_augment(x, pb, kernel_size, seed)
        model, _ = train_with_trace(cuda_train, arch, config, hook)
        rows.append([float(pb), evaluate(model, clean_test)])
    metrics = {"accuracy": [r[1] for r in rows]}
    if baseline is not None:
        metrics["baseline"] = baseline
    return ExperimentReport(
        "blur_defense",
        {"arch": arch, "train": asdict(config), "kernel_size": kernel_size},
        ["blur", "clean_test_acc"], rows, metrics)
