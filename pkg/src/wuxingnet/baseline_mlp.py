"""Sparse-masked multilayer perceptron trained with plain backpropagation.

Used to measure how accuracy degrades as the link ratio between layers
shrinks.  Hidden layers use the chosen activation, the output layer is
linear and the loss is the summed squared error against a one-hot target.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_mnist import Dataset


@dataclass
class MaskedMLP:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i] has shape (n_{i+1}, n_i)
    biases: list[np.ndarray]
    masks: list[np.ndarray]
    activation: str = "sigmoid"

    def density(self) -> list[float]:
        return [float(m.mean()) for m in self.masks]


def _act(z, kind):
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(a, z, kind):
    if kind == "sigmoid":
        return a * (1.0 - a)
    return (z > 0).astype(a.dtype)


def random_mask(n_out: int, n_in: int, link_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``round(link_ratio * n_out * n_in)`` links, drawn uniformly."""
    if not 0 < link_ratio <= 1:
        raise ValueError("link ratio must lie in (0, 1]")
    total = n_out * n_in
    k = int(round(link_ratio * total))
    mask = np.zeros(total, dtype=bool)
    mask[rng.choice(total, size=k, replace=False)] = True
    return mask.reshape(n_out, n_in)


def make_masked_mlp(layer_sizes: Sequence[int], link_ratio: float = 1.0, seed: int = 0,
                    activation: str = "sigmoid", dtype=np.float64) -> MaskedMLP:
    """Glorot-uniform weights scaled to each unit's effective fan-in/out."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases, masks = [], [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        mask = random_mask(n_out, n_in, link_ratio, rng)
        fan_in = max(mask.sum(axis=1).mean(), 1.0)
        fan_out = max(mask.sum(axis=0).mean(), 1.0)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in)) * mask
        weights.append(w.astype(dtype))
        biases.append(np.zeros(n_out, dtype=dtype))
        masks.append(mask)
    return MaskedMLP(sizes, weights, biases, masks, activation)


def _forward_all(model: MaskedMLP, x):
    acts, pre = [np.asarray(x, dtype=model.weights[0].dtype)], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = w @ acts[-1] + b
        pre.append(z)
        acts.append(z if i == last else _act(z, model.activation))
    return acts, pre


def mlp_forward(model: MaskedMLP, image) -> np.ndarray:
    x = np.asarray(image)
    if x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.layer_sizes[0]}")
    return _forward_all(model, x)[0][-1]


def mlp_gradients(model: MaskedMLP, image, target):
    """Squared-error loss and its gradients (masked) for every weight and bias."""
    acts, pre = _forward_all(model, image)
    err = acts[-1] - np.asarray(target, dtype=acts[-1].dtype)
    loss = float(err @ err)
    delta = 2.0 * err
    grads_w, grads_b = [None] * len(model.weights), [None] * len(model.weights)
    for i in reversed(range(len(model.weights))):
        grads_w[i] = np.outer(delta, acts[i]) * model.masks[i]
        grads_b[i] = delta
        if i:
            delta = (model.weights[i].T @ delta) * _act_grad(acts[i], pre[i - 1], model.activation)
    return loss, grads_w, grads_b


def mlp_train_step(model: MaskedMLP, image, target, learning_rate: float) -> float:
    """One SGD step on a single sample; returns the loss before the step.

    Same arithmetic as applying ``mlp_gradients``, fused in place.  Masked
    gradient entries are zero, so masked weights stay exactly zero.
    """
    acts, pre = _forward_all(model, image)
    err = acts[-1] - np.asarray(target, dtype=acts[-1].dtype)
    loss = float(err @ err)
    delta = 2.0 * err
    for i in reversed(range(len(model.weights))):
        w = model.weights[i]
        back = (w.T @ delta) * _act_grad(acts[i], pre[i - 1], model.activation) if i else None
        step = np.outer(delta, acts[i])
        step *= -learning_rate
        if not model.masks[i].all():
            step *= model.masks[i]
        w += step
        model.biases[i] -= learning_rate * delta
        delta = back
    return loss


def mlp_accuracy(model: MaskedMLP, images, labels, batch: int = 1000) -> float:
    if len(labels) == 0:
        return 0.0
    x = np.asarray(images, dtype=model.weights[0].dtype) / 255.0
    correct = 0
    for start in range(0, len(x), batch):
        a = x[start:start + batch].T
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            a = w @ a + b[:, None]
            if i < len(model.weights) - 1:
                a = _act(a, model.activation)
        correct += int(np.sum(np.argmax(a, axis=0) == labels[start:start + batch]))
    return correct / len(labels)


@dataclass(frozen=True)
class SweepRow:
    link_ratio: float
    epoch: int
    accuracy: float
    seed: int


def train_masked(layer_sizes, link_ratio: float, dataset: Dataset, epochs: int, seed: int,
                 learning_rate: float = 0.01, activation: str = "relu",
                 dtype=np.float32) -> tuple[MaskedMLP, list[float]]:
    """Train one masked model; returns it with its per-epoch training accuracy."""
    model = make_masked_mlp(layer_sizes, link_ratio, seed, activation, dtype)
    x = np.asarray(dataset.images, dtype=dtype) / 255.0
    targets = np.eye(layer_sizes[-1], dtype=dtype)[dataset.labels]
    rng = np.random.default_rng([seed, 1])
    curve = []
    for _ in range(epochs):
        for i in rng.permutation(len(x)):
            mlp_train_step(model, x[i], targets[i], learning_rate)
        curve.append(mlp_accuracy(model, dataset.images, dataset.labels))
    return model, curve


def lr_sweep(layer_sizes, link_ratios: Iterable[float], dataset: Dataset, epochs: int,
             seeds: Sequence[int] | int = 0, learning_rate: float = 0.01,
             activation: str = "relu", threads: int = 1) -> list[SweepRow]:
    """Training-accuracy curve for every (link ratio, seed) cell.

    Cells are independent and may run on ``threads`` workers; row order
    is always ratio-major, then seed, then epoch.
    """
    link_ratios = [float(v) for v in link_ratios]
    for v in link_ratios:
        if not 0 < v <= 1:
            raise ValueError(f"link ratio {v} outside (0, 1]")
    seeds = [seeds] if isinstance(seeds, int) else list(seeds)
    cells = [(ratio, seed) for ratio in link_ratios for seed in seeds]

    def run(cell):
        return train_masked(layer_sizes, cell[0], dataset, epochs, cell[1], learning_rate, activation)[1]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            curves = list(pool.map(run, cells))
    else:
        curves = [run(c) for c in cells]
    return [SweepRow(ratio, e + 1, acc, seed) for (ratio, seed), curve in zip(cells, curves)
            for e, acc in enumerate(curve)]


def write_sweep_csv(rows: Sequence[SweepRow], path, header_lines: Sequence[str] = ()) -> None:
    with open(Path(path), "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lr", "epoch", "accuracy", "seed"])
        for r in rows:
            writer.writerow([repr(r.link_ratio), r.epoch, repr(r.accuracy), r.seed])
