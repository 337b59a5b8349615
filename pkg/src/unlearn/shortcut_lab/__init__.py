"""Desk-scale classifiers and the shortcut-learning experiments."""
from .experiments import (dat_sweep, grayscale_check, protection_sweep, random_blur_defense_check,
                          shortcut_report, universal_filter)
from .models import ClassifierModel, SGDMomentum
from .synthetic import TemplateTask, make_template_task
from .training import DATConfig, TrainConfig, dat_train, evaluate, train, train_with_trace

__all__ = [
    "ClassifierModel", "DATConfig", "SGDMomentum", "TemplateTask", "TrainConfig", "dat_sweep",
    "dat_train", "evaluate", "grayscale_check", "make_template_task", "protection_sweep",
    "random_blur_defense_check", "shortcut_report", "train", "train_with_trace", "universal_filter",
]
