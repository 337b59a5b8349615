"""Small numpy classifiers with hand-written backward passes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import SplitMix64

ARCHITECTURES = ("linear", "mlp")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsum - z[np.arange(len(labels)), labels]))


_STD_EPS = 1e-6


def standardize(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row zero mean / unit variance; returns ``(normalized, 1/std)``."""
    centered = h - h.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + _STD_EPS)
    return centered * inv, inv


def standardize_backward(g: np.ndarray, normalized: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (g - g.mean(axis=1, keepdims=True)
                  - normalized * (g * normalized).mean(axis=1, keepdims=True))


@dataclass
class ClassifierModel:
    """``linear``: softmax regression; ``mlp``: one ReLU hidden layer.

    Each flattened input is standardized per image before the first layer
    so that global brightness and contrast do not carry class information.
    """

    arch: str
    input_shape: tuple[int, ...]
    num_classes: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, arch: str, input_shape, num_classes: int, seed: int, hidden: int = 128) -> "ClassifierModel":
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        D = int(np.prod(input_shape))
        rng = SplitMix64(seed)
        if arch == "linear":
            params = {"W": rng.normal(D * num_classes).reshape(D, num_classes) * (0.01 / math.sqrt(D)),
                      "b": np.zeros(num_classes)}
        else:
            params = {
                "W1": rng.normal(D * hidden).reshape(D, hidden) * math.sqrt(2.0 / D),
                "b1": np.zeros(hidden),
                "W2": rng.normal(hidden * num_classes).reshape(hidden, num_classes) * math.sqrt(1.0 / hidden),
                "b2": np.zeros(num_classes),
            }
        return cls(arch, tuple(int(s) for s in input_shape), int(num_classes), params)

    def _flat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match model {self.input_shape}")
        return x.reshape(len(x), -1)

    def logits(self, x: np.ndarray) -> np.ndarray:
        h, _ = standardize(self._flat(x))
        p = self.params
        if self.arch == "linear":
            return h @ p["W"] + p["b"]
        a = np.maximum(h @ p["W1"] + p["b1"], 0.0)
        return a @ p["W2"] + p["b2"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum, i.e. ties go to the smaller class
        return np.argmax(self.logits(x), axis=1)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, reduction: str = "mean",
                       want_input: bool = False):
        """Cross-entropy and its gradients.

        Returns ``(loss, param_grads, input_grad)``; ``input_grad`` has the
        shape of ``x`` when ``want_input`` is set, else ``None``.
        """
        h, inv = standardize(self._flat(x))
        n = len(h)
        p = self.params
        if self.arch == "linear":
            logits = h @ p["W"] + p["b"]
        else:
            pre = h @ p["W1"] + p["b1"]
            act = np.maximum(pre, 0.0)
            logits = act @ p["W2"] + p["b2"]
        scale = 1.0 / n if reduction == "mean" else 1.0
        loss = cross_entropy(logits, labels) * (1.0 if reduction == "mean" else n)
        g = softmax(logits)
        g[np.arange(n), labels] -= 1.0
        g *= scale
        grads = {}
        if self.arch == "linear":
            grads["W"] = h.T @ g
            grads["b"] = g.sum(axis=0)
            gin = g @ p["W"].T if want_input else None
        else:
            grads["W2"] = act.T @ g
            grads["b2"] = g.sum(axis=0)
            gpre = (g @ p["W2"].T) * (pre > 0)
            grads["W1"] = h.T @ gpre
            grads["b1"] = gpre.sum(axis=0)
            gin = gpre @ p["W1"].T if want_input else None
        if gin is not None:
            gin = standardize_backward(gin, h, inv).reshape(np.shape(x))
        return loss, grads, gin

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.arch, self.input_shape, self.num_classes,
                               {k: v.copy() for k, v in self.params.items()})


class SGDMomentum:
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, w in self.params.items():
            g = grads[name] + self.weight_decay * w
            v = self.velocity[name]
            v *= self.momentum
            v += g
            w -= lr * v
