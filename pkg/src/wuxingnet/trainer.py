"""Backward-signal-propagation training of connection coefficients.

For every sample the network is run forward with the image as drive, then
(from rest, over the same window) backward with an error signal injected
at the output interfaces.  Each connection's causal quantity is the
product of the forward deviation integral at its source interface and the
backward deviation integral at its destination interface.  The quantity
is squashed with ``atan`` and added to the coefficient, which is then
clipped to its bounds.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .data_mnist import N_CLASSES, Dataset, encode_drive
from .engine import DriveSet, SimulationConfig, TraceSet, output_integrals, simulate_backward, simulate_forward
from .errors import SimulationDivergedError
from .topology import Connection, NetworkTopology, topology_from_dict, topology_to_dict

ERROR_MODES = ("softmax", "normalized")
NORM_EPS = 1e-9
HIST_BINS = 20
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters plus the simulation window used for training.

    ``error_mode`` picks the backward injection: ``"softmax"`` drives output
    ``j`` with ``error_scale * (target_j - softmax(y)_j)``; ``"normalized"``
    uses ``error_scale * (target_j - y_j / max|y|)``.  ``batch_size`` above
    one averages G2 over that many samples before applying it.  Epoch ``k``
    (counted from 0) steps with ``step_scale * step_decay ** k``.
    """

    kt: float = 1.0
    step_scale: float = 0.1
    step_decay: float = 1.0
    c_min: float = -0.5
    c_max: float = 1.0
    epochs: int = 10
    input_scale: float = 0.5
    error_scale: float = 0.05
    error_mode: str = "softmax"
    shuffle_seed: int = 0
    batch_size: int = 1
    t_end: float = 20.0
    dt: float = 0.1
    integrator: str = "rk4"

    def __post_init__(self):
        if not self.kt > 0:
            raise ValueError("kt must be positive")
        if not self.step_scale >= 0:
            raise ValueError("step_scale must be non-negative")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if not self.c_min < self.c_max:
            raise ValueError("c_min must be below c_max")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.input_scale > 0 or not self.error_scale > 0:
            raise ValueError("input_scale and error_scale must be positive")
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"error_mode must be one of {ERROR_MODES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        self.sim  # validates t_end, dt and integrator

    def step_at(self, epoch: int) -> float:
        return self.step_scale * self.step_decay ** epoch

    @property
    def sim(self) -> SimulationConfig:
        return SimulationConfig(self.t_end, self.dt, self.integrator)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class UpdateRecord:
    connection: int
    g1: float
    g2: float
    c_before: float
    c_after: float


@dataclass(frozen=True, eq=False)
class UpdateBatch:
    """All updates from one step, stored as arrays (one entry per connection)."""

    g1: np.ndarray
    g2: np.ndarray
    c_before: np.ndarray
    c_after: np.ndarray

    def __len__(self):
        return len(self.g2)

    def __iter__(self) -> Iterator[UpdateRecord]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> UpdateRecord:
        return UpdateRecord(int(i), float(self.g1[i]), float(self.g2[i]),
                            float(self.c_before[i]), float(self.c_after[i]))

    def records(self) -> list[UpdateRecord]:
        return list(self)


# ------------------------------------------------------------------ update rule

def causal_quantity(fwd: TraceSet, bwd: TraceSet, conn: Connection) -> float:
    """Forward integral at the source interface times backward integral at the destination."""
    _check_pair(fwd, bwd)
    return float(fwd.integrals[conn.src_neuron, conn.src_element] * bwd.integrals[conn.dst_neuron, conn.dst_element])


def causal_quantities(fwd: TraceSet, bwd: TraceSet, topology: NetworkTopology) -> np.ndarray:
    """Vectorised ``causal_quantity`` over every connection, in table order."""
    _check_pair(fwd, bwd)
    return fwd.flat[topology.src_index] * bwd.flat[topology.dst_index]


def _check_pair(fwd: TraceSet, bwd: TraceSet) -> None:
    if fwd.integrals.shape != bwd.integrals.shape or fwd.t_end != bwd.t_end or fwd.dt != bwd.dt:
        raise ValueError("forward and backward traces come from different networks or windows")


def clamp_update(g1, kt: float):
    """``atan(g1 * kt) / kt``: linear for small g1, bounded by ``pi / (2 kt)``.

    Exactly ``|G2 - g1| <= |g1|**3 * kt**2 / 3``.  Near zero the true value
    lies within an ulp of that bound, so a result rounded past it is moved
    one ulp back toward ``g1``.
    """
    if not kt > 0:
        raise ValueError("kt must be positive")
    g1 = np.asarray(g1, dtype=float)
    out = np.arctan(g1 * kt) / kt
    with np.errstate(over="ignore"):  # an infinite bound never binds
        bound = np.abs(g1) ** 3 * kt ** 2 / 3
    over = np.abs(out - g1) > bound
    while np.any(over):
        out = np.where(over, np.nextafter(out, g1), out)
        over = np.abs(out - g1) > bound
    return float(out) if out.ndim == 0 else out


def apply_update(coeffs: np.ndarray, conn: int, g2: float, cfg: TrainConfig) -> UpdateRecord:
    """Add ``step_scale * g2`` to one coefficient, clip, and record the change."""
    before = float(coeffs[conn])
    after = float(np.clip(before + cfg.step_scale * g2, cfg.c_min, cfg.c_max))
    coeffs[conn] = after
    g1 = math.tan(g2 * cfg.kt) / cfg.kt if abs(g2 * cfg.kt) < math.pi / 2 else math.copysign(math.inf, g2)
    return UpdateRecord(int(conn), g1, float(g2), before, after)


def apply_updates(coeffs: np.ndarray, g1: np.ndarray, g2: np.ndarray, cfg: TrainConfig) -> UpdateBatch:
    before = coeffs.copy()
    np.clip(coeffs + cfg.step_scale * g2, cfg.c_min, cfg.c_max, out=coeffs)
    return UpdateBatch(np.asarray(g1), np.asarray(g2), before, coeffs.copy())


def error_drive(target, outputs, cfg: TrainConfig) -> DriveSet:
    """Constant backward drive at the output interfaces."""
    target = np.asarray(target, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    if cfg.error_mode == "normalized":
        pred = y / (np.max(np.abs(y)) + NORM_EPS)
    else:
        z = np.exp(y - y.max())
        pred = z / z.sum()
    return DriveSet(cfg.error_scale * (target - pred))


def one_hot(label: int, n: int = N_CLASSES) -> np.ndarray:
    t = np.zeros(n)
    t[int(label)] = 1.0
    return t


# ------------------------------------------------------------------ one sample

ErrorFn = Callable[[np.ndarray, np.ndarray, TrainConfig], DriveSet]


def forward_outputs(topology: NetworkTopology, coeffs, image, cfg: TrainConfig) -> np.ndarray:
    traces = simulate_forward(topology, coeffs, DriveSet(encode_drive(image, cfg.input_scale)), cfg.sim)
    return output_integrals(traces, topology)


def sample_gradient(topology: NetworkTopology, coeffs, image, label, cfg: TrainConfig,
                    error_fn: ErrorFn | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Causal quantities for one sample, without touching the coefficients.

    Returns ``(g1, outputs)``.  Layer-0 neurons are skipped in the backward
    run; they emit nothing backward, so no destination integral needs them.
    """
    fwd = simulate_forward(topology, coeffs, DriveSet(encode_drive(image, cfg.input_scale)), cfg.sim)
    outputs = output_integrals(fwd, topology)
    drive = (error_fn or error_drive)(one_hot(label, len(outputs)), outputs, cfg)
    bwd = simulate_backward(topology, coeffs, drive, cfg.sim, skip_sinks=True)
    return causal_quantities(fwd, bwd, topology), outputs


def train_sample(topology: NetworkTopology, coeffs: np.ndarray, image, label, cfg: TrainConfig,
                 error_fn: ErrorFn | None = None) -> UpdateBatch:
    """One online update; ``coeffs`` is modified in place."""
    g1, _ = sample_gradient(topology, coeffs, image, label, cfg, error_fn)
    return apply_updates(coeffs, g1, clamp_update(g1, cfg.kt), cfg)


# ------------------------------------------------------------------ epochs

@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    n_samples: int
    accuracy: float  # argmax-correct fraction seen during the epoch, before each update
    mean_abs_g2: float
    min_c: float
    max_c: float
    histogram: np.ndarray = field(repr=False)
    bin_edges: np.ndarray = field(repr=False)

    @property
    def empty(self) -> bool:
        return self.n_samples == 0


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    """Sample order for an epoch; depends only on the seed and epoch number."""
    return np.random.default_rng([int(shuffle_seed), int(epoch)]).permutation(n)


def _check_bounds(coeffs, cfg: TrainConfig) -> None:
    if len(coeffs) and (coeffs.min() < cfg.c_min or coeffs.max() > cfg.c_max):
        raise RuntimeError("coefficient left its bounds")


def train_epoch(topology: NetworkTopology, coeffs: np.ndarray, dataset: Dataset, cfg: TrainConfig,
                epoch: int = 0, error_fn: ErrorFn | None = None) -> EpochMetrics:
    """Train over a seeded shuffle of ``dataset``; ``coeffs`` is modified in place."""
    order = epoch_order(len(dataset), cfg.shuffle_seed, epoch)
    step_cfg = replace(cfg, step_scale=cfg.step_at(epoch))
    correct = 0
    g2_sum = 0.0
    n_updates = 0
    pending = np.zeros(len(coeffs))
    pending_g1 = np.zeros(len(coeffs))
    in_batch = 0
    for pos, i in enumerate(order):
        try:
            g1, outputs = sample_gradient(topology, coeffs, dataset.images[i], dataset.labels[i], cfg, error_fn)
        except SimulationDivergedError as exc:
            exc.epoch, exc.sample = epoch, pos
            raise
        correct += int(np.argmax(outputs) == dataset.labels[i])
        g2 = clamp_update(g1, cfg.kt)
        g2_sum += float(np.abs(g2).sum())
        n_updates += len(g2)
        if cfg.batch_size == 1:
            apply_updates(coeffs, g1, g2, step_cfg)
            continue
        pending += g2
        pending_g1 += g1
        in_batch += 1
        if in_batch == cfg.batch_size:
            apply_updates(coeffs, pending_g1 / in_batch, pending / in_batch, step_cfg)
            pending[:] = pending_g1[:] = 0.0
            in_batch = 0
    if in_batch:
        apply_updates(coeffs, pending_g1 / in_batch, pending / in_batch, step_cfg)
    _check_bounds(coeffs, cfg)
    hist, edges = np.histogram(coeffs, bins=HIST_BINS, range=(cfg.c_min, cfg.c_max))
    n = len(dataset)
    return EpochMetrics(
        epoch=epoch,
        n_samples=n,
        accuracy=correct / n if n else 0.0,
        mean_abs_g2=g2_sum / n_updates if n_updates else 0.0,
        min_c=float(coeffs.min()) if len(coeffs) else 0.0,
        max_c=float(coeffs.max()) if len(coeffs) else 0.0,
        histogram=hist,
        bin_edges=edges,
    )


# ------------------------------------------------------------------ evaluation

def predict(topology: NetworkTopology, coeffs, dataset: Dataset, cfg: TrainConfig,
            threads: int = 1) -> np.ndarray:
    """Argmax class per sample, forward only; samples run on ``threads`` workers."""
    snapshot = np.array(coeffs, dtype=float, copy=True)

    def one(i):
        return int(np.argmax(forward_outputs(topology, snapshot, dataset.images[i], cfg)))

    idx = range(len(dataset))
    if threads <= 1 or len(dataset) < 2:
        preds = [one(i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(one, idx))
    return np.asarray(preds, dtype=np.int64)


def evaluate(topology: NetworkTopology, coeffs, dataset: Dataset, cfg: TrainConfig, threads: int = 1) -> float:
    """Fraction of samples whose argmax output equals the label."""
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict(topology, coeffs, dataset, cfg, threads) == dataset.labels))


def confusion_matrix(labels, preds, n_classes: int = N_CLASSES) -> np.ndarray:
    """``m[true, predicted]`` counts."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return m


# ------------------------------------------------------------------ run loop, files

@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    accuracy: float
    mean_abs_g2: float
    min_c: float
    max_c: float

    def as_list(self) -> list:
        return [self.epoch, self.split, self.accuracy, self.mean_abs_g2, self.min_c, self.max_c]


@dataclass
class TrainingState:
    """Everything needed to continue a run: coefficients live alongside."""

    epoch: int  # number of completed epochs
    config: TrainConfig
    metrics: list[MetricsRow]

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            # epoch k shuffles with default_rng([shuffle_seed, k]); nothing else is random
            "rng": {"scheme": "default_rng([shuffle_seed, epoch])", "shuffle_seed": self.config.shuffle_seed},
            "metrics": [r.as_list() for r in self.metrics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainingState:
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        rows = [MetricsRow(int(e), str(s), float(a), float(g), float(lo), float(hi))
                for e, s, a, g, lo, hi in d["metrics"]]
        return cls(int(d["epoch"]), TrainConfig.from_dict(d["config"]), rows)


def save_checkpoint(path, topology: NetworkTopology, coeffs, state: TrainingState) -> None:
    doc = topology_to_dict(topology, coeffs)
    doc["training_state"] = state.to_dict()
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[NetworkTopology, np.ndarray, TrainingState | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    topology = topology_from_dict(doc)
    state = doc.get("training_state")
    return topology, topology.coefficients(), TrainingState.from_dict(state) if state else None


def run_training(topology: NetworkTopology, coeffs: np.ndarray, train: Dataset, test: Dataset,
                 cfg: TrainConfig, state: TrainingState | None = None, threads: int = 1,
                 on_epoch: Callable[[TrainingState, np.ndarray], None] | None = None,
                 error_fn: ErrorFn | None = None) -> TrainingState:
    """Train for ``cfg.epochs`` epochs, continuing from ``state`` if given.

    A fresh run first records the untrained test accuracy as epoch 0.  Each
    completed epoch ``k`` adds a ``train`` row (accuracy seen during the
    epoch) and a ``test`` row, then calls ``on_epoch``.
    """
    if state is None:
        acc = evaluate(topology, coeffs, test, cfg, threads)
        state = TrainingState(0, cfg, [MetricsRow(0, "test", acc, 0.0, float(coeffs.min()), float(coeffs.max()))])
    for epoch in range(state.epoch, cfg.epochs):
        m = train_epoch(topology, coeffs, train, cfg, epoch, error_fn)
        acc = evaluate(topology, coeffs, test, cfg, threads)
        state.metrics.append(MetricsRow(epoch + 1, "train", m.accuracy, m.mean_abs_g2, m.min_c, m.max_c))
        state.metrics.append(MetricsRow(epoch + 1, "test", acc, m.mean_abs_g2, m.min_c, m.max_c))
        state.epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(state, coeffs)
    return state


def write_metrics_csv(rows: Sequence[MetricsRow], path, header_lines: Sequence[str] = ()) -> None:
    with open(Path(path), "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "split", "accuracy", "mean_abs_g2", "min_c", "max_c"])
        for r in rows:
            writer.writerow([r.epoch, r.split, *(repr(float(v)) for v in (r.accuracy, r.mean_abs_g2, r.min_c, r.max_c))])
