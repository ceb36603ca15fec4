"""Fully connected networks with Swish activations, trained with Adam."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger
from scipy.special import expit, logsumexp

from cvforge.datasets import LabeledDataset
from cvforge.errors import InvalidArchitectureError, InvalidArgumentError, InvalidInputError

HIDDEN_WIDTHS = (32, 32, 32, 32)

Layer = tuple[np.ndarray, np.ndarray]


def swish(x):
    return x * expit(x)


def swish_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


@dataclass(frozen=True)
class MLPReport:
    loss: float
    accuracy: float
    steps: int


@dataclass(frozen=True, eq=False)
class MLPModel:
    """Affine layers (W: out×in, b: out) with Swish between them; the last
    layer's outputs are left un-normalized."""

    layers: tuple[Layer, ...]
    report: MLPReport | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.layers:
            raise InvalidArchitectureError("Network needs at least one layer")
        for k, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InvalidArchitectureError(f"Layer {k} has inconsistent shapes {W.shape}, {b.shape}")
            if k and W.shape[1] != self.layers[k - 1][0].shape[0]:
                raise InvalidArchitectureError(
                    f"Layer {k} expects {W.shape[1]} inputs, previous layer gives {self.layers[k - 1][0].shape[0]}"
                )

    @property
    def widths(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @property
    def n_features(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise InvalidInputError(f"Network expects {self.n_features} features, got {x.shape[-1]}")
        h = x
        for W, b in self.layers[:-1]:
            h = swish(h @ W.T + b)
        W, b = self.layers[-1]
        return h @ W.T + b

    def output_and_input_grad(self, x: np.ndarray, node: int) -> tuple[float, np.ndarray]:
        """Selected output node and its gradient w.r.t. the input vector."""
        x = np.asarray(x, dtype=float)
        pre = []
        h = x
        for W, b in self.layers[:-1]:
            a = W @ h + b
            pre.append(a)
            h = swish(a)
        W, b = self.layers[-1]
        out = W[node] @ h + b[node]
        g = W[node].copy()
        for (W, _), a in zip(reversed(self.layers[:-1]), reversed(pre)):
            g = (g * swish_grad(a)) @ W
        return float(out), g


def _init_layers(widths: Sequence[int], rng: np.random.Generator) -> list[Layer]:
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return layers


def _pair(params: list[np.ndarray]) -> list[Layer]:
    return [(params[k], params[k + 1]) for k in range(0, len(params), 2)]


def loss_and_grads(layers: Sequence[Layer], X: np.ndarray, y: np.ndarray) -> tuple[float, list[Layer]]:
    """Mean softmax cross-entropy and its gradient for every (W, b)."""
    n = X.shape[0]
    acts = [X]
    pres = []
    h = X
    for W, b in layers[:-1]:
        a = h @ W.T + b
        pres.append(a)
        h = swish(a)
        acts.append(h)
    W, b = layers[-1]
    logits = h @ W.T + b
    log_norm = logsumexp(logits, axis=1)
    loss = float(np.mean(log_norm - logits[np.arange(n), y]))

    delta = np.exp(logits - log_norm[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads: list[Layer] = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((delta.T @ acts[k], delta.sum(axis=0)))
        if k:
            delta = (delta @ W) * swish_grad(pres[k - 1])
    grads.reverse()
    return loss, grads


def train_mlp(
    data: LabeledDataset,
    layer_widths: Sequence[int] | None = None,
    learning_rate: float = 0.1,
    batch_size: int = 32,
    epochs: int = 1,
    seed: int = 0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> MLPModel:
    widths = list(layer_widths) if layer_widths else [data.n_features, *HIDDEN_WIDTHS, data.class_count]
    if len(widths) < 2 or widths[0] != data.n_features or widths[-1] != data.class_count:
        raise InvalidArchitectureError(
            f"Widths {widths} must start at {data.n_features} features and end at {data.class_count} classes"
        )
    if any(w < 1 for w in widths):
        raise InvalidArchitectureError(f"Widths must be positive, got {widths}")
    if epochs < 1:
        raise InvalidArgumentError(f"epochs must be at least 1, got {epochs}")
    if batch_size < 1 or learning_rate <= 0:
        raise InvalidArgumentError("batch_size and learning_rate must be positive")
    if not np.all(np.isfinite(data.X)):
        raise InvalidInputError("Training features contain non-finite values")

    rng = np.random.default_rng(seed)
    params = [p for layer in _init_layers(widths, rng) for p in layer]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    n = data.X.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            _, grads = loss_and_grads(_pair(params), data.X[rows], data.y[rows])
            t += 1
            corr1 = 1.0 - beta1**t
            corr2 = 1.0 - beta2**t
            for k, g in enumerate(p for layer in grads for p in layer):
                m[k] = beta1 * m[k] + (1.0 - beta1) * g
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
                params[k] = params[k] - learning_rate * (m[k] / corr1) / (np.sqrt(v[k] / corr2) + eps)
        logger.debug("epoch {} done after {} Adam steps", epoch + 1, t)
    layers = _pair(params)

    final_loss, _ = loss_and_grads(layers, data.X, data.y)
    model = MLPModel(tuple(layers))
    acc = float(np.mean(np.argmax(model.forward(data.X), axis=1) == data.y))
    logger.info("network trained: loss={:.4g} accuracy={:.4f} steps={}", final_loss, acc, t)
    return MLPModel(tuple(layers), MLPReport(final_loss, acc, t))
