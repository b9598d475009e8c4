"""Whole-network integration in the forward or reversed direction.

All neurons form one coupled ODE system.  Each connection adds
``coeff * D`` of its upstream interface to the drive of its downstream
interface; in the backward direction the same connections carry signal
from ``dst`` to ``src`` and every neuron follows the reversed dynamics.
Neurons start at their rest state, so ``D = 0`` at ``t = 0``.

Neurons that no signal can reach (no drive, no live path from a driven
neuron) stay exactly at rest and are not integrated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import N_ELEMENTS, NeuronParams, fixed_point
from .errors import SimulationDivergedError
from .topology import NetworkTopology

MAX_STEPS = 10**7


@dataclass(frozen=True)
class SimulationConfig:
    t_end: float = 20.0
    dt: float = 0.01
    integrator: str = "rk4"
    record_full_traces: bool = False

    def __post_init__(self):
        if not self.t_end > 0 or not self.dt > 0:
            raise ValueError("t_end and dt must be positive")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.t_end / self.dt > MAX_STEPS:
            raise ValueError(f"more than {MAX_STEPS} steps requested")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True, eq=False)
class DriveSet:
    """Drive per external binding, piecewise constant in time.

    ``values`` has shape ``(n_bindings,)`` for a drive held over the whole
    window, or ``(n_segments, n_bindings)`` together with ``switch_times``
    (segment start times, first one 0).
    """

    values: np.ndarray
    switch_times: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise ValueError("drive values must be finite")
        if self.switch_times is not None:
            times = np.asarray(self.switch_times, dtype=float)
            if values.ndim != 2 or len(times) != len(values):
                raise ValueError("segmented drives need one row of values per switch time")
            if times[0] != 0 or np.any(np.diff(times) <= 0):
                raise ValueError("switch times must start at 0 and increase")
            object.__setattr__(self, "switch_times", times)
        elif values.ndim != 1:
            raise ValueError("constant drives are one value per binding")

    @property
    def n_bindings(self) -> int:
        return self.values.shape[-1]

    def segments(self, t_end: float):
        if self.switch_times is None:
            yield 0.0, t_end, self.values
            return
        ends = list(self.switch_times[1:]) + [t_end]
        for start, end, row in zip(self.switch_times, ends, self.values):
            if start < t_end:
                yield float(start), float(min(end, t_end)), row


@dataclass(frozen=True, eq=False)
class TraceSet:
    """Per-interface integral of the deviation signal over the window."""

    integrals: np.ndarray  # (n_neurons, 5)
    direction: str
    t_end: float
    dt: float
    times: np.ndarray | None = field(default=None)
    states: np.ndarray | None = field(default=None)  # (n_samples, n_neurons, 5)
    rest: np.ndarray | None = field(default=None)  # (n_neurons, 5)

    def integral_at(self, neuron: int, element: int) -> float:
        return float(self.integrals[neuron, element])

    @property
    def flat(self) -> np.ndarray:
        return self.integrals.reshape(-1)


@lru_cache(maxsize=256)
def _rest_state(params: NeuronParams, reverse: bool) -> np.ndarray:
    return fixed_point(params, reverse=reverse)


def rest_states(topology: NetworkTopology, reverse: bool = False) -> np.ndarray:
    """Rest state of every interface, shape ``(n_neurons, 5)``."""
    rows = [np.tile(_rest_state(p, reverse), (size, 1)) for p, size in zip(topology.params, topology.layer_sizes)]
    return np.concatenate(rows)


def _reachable(topology: NetworkTopology, coeffs: np.ndarray, seeds: np.ndarray, reverse: bool) -> np.ndarray:
    live = coeffs != 0
    src_n = topology.src_index // N_ELEMENTS
    dst_n = topology.dst_index // N_ELEMENTS
    frm, to = (dst_n, src_n) if reverse else (src_n, dst_n)
    frm, to = frm[live], to[live]
    active = seeds.copy()
    for _ in range(len(topology.layer_sizes)):
        grown = active.copy()
        grown[to[active[frm]]] = True
        if np.array_equal(grown, active):
            break
        active = grown
    return active


def _simulate(topology: NetworkTopology, coeffs, drives: DriveSet, cfg: SimulationConfig,
              reverse: bool, skip_sinks: bool = False) -> TraceSet:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (len(topology.connections),):
        raise ValueError("coefficient table does not match the topology")
    bindings = topology.output_index if reverse else topology.input_index
    if drives.n_bindings != len(bindings):
        kind = "external outputs" if reverse else "external inputs"
        raise ValueError(f"drive covers {drives.n_bindings} bindings, topology has {len(bindings)} {kind}")

    n = topology.n_neurons
    rest = rest_states(topology, reverse)
    flat_rest = rest.reshape(-1)
    seeds = np.zeros(n, dtype=bool)
    driven = np.any(drives.values.reshape(-1, len(bindings)) != 0, axis=0)
    seeds[bindings[driven] // N_ELEMENTS] = True
    active = _reachable(topology, coeffs, seeds, reverse)
    if skip_sinks:
        src_n = topology.src_index // N_ELEMENTS
        dst_n = topology.dst_index // N_ELEMENTS
        emitters = np.zeros(n, dtype=bool)
        emitters[dst_n if reverse else src_n] = True
        active &= emitters

    neurons = np.flatnonzero(active)
    local = np.full(n, -1, dtype=np.int64)
    local[neurons] = np.arange(len(neurons))
    elem = (neurons[:, None] * N_ELEMENTS + np.arange(N_ELEMENTS)).reshape(-1)

    frm, to = (topology.dst_index, topology.src_index) if reverse else (topology.src_index, topology.dst_index)
    keep = (local[frm // N_ELEMENTS] >= 0) & (local[to // N_ELEMENTS] >= 0) & (coeffs != 0)
    c_src = local[frm[keep] // N_ELEMENTS] * N_ELEMENTS + frm[keep] % N_ELEMENTS
    c_dst = local[to[keep] // N_ELEMENTS] * N_ELEMENTS + to[keep] % N_ELEMENTS
    c_val = np.ascontiguousarray(coeffs[keep])

    k1, k2, k3 = (np.ascontiguousarray(k[elem]) for k in topology.element_params)
    state = flat_rest[elem].copy()
    rest_c = flat_rest[elem].copy()
    integral = np.zeros(len(elem))
    bind_local = local[bindings // N_ELEMENTS]
    bind_ok = bind_local >= 0
    bind_pos = bind_local[bind_ok] * N_ELEMENTS + bindings[bind_ok] % N_ELEMENTS

    method = kernels.RK4 if cfg.integrator == "rk4" else kernels.EULER
    direction = "backward" if reverse else "forward"
    records, times = [], []
    t0 = 0.0
    for start, end, row in drives.segments(cfg.t_end):
        steps = int(round((end - start) / cfg.dt))
        if steps == 0:
            continue
        ext = np.zeros(len(elem))
        ext[bind_pos] = row[bind_ok]
        record = np.empty((steps + 1 if cfg.record_full_traces else 0, len(elem)))
        bad, at = kernels.integrate(state, rest_c, k1, k2, k3, ext, c_src, c_dst, c_val, reverse,
                                    cfg.dt, steps, method, integral, record)
        if bad >= 0:
            raise SimulationDivergedError(int(neurons[bad // N_ELEMENTS]), t0 + at * cfg.dt, direction)
        if cfg.record_full_traces:
            first = 0 if not records else 1
            records.append(record[first:])
            times.append(t0 + cfg.dt * np.arange(first, steps + 1))
        t0 += steps * cfg.dt

    integrals = np.zeros(n * N_ELEMENTS)
    integrals[elem] = integral
    integrals = integrals.reshape(n, N_ELEMENTS)
    states = tvec = None
    if cfg.record_full_traces:
        compact = np.concatenate(records) if records else np.empty((0, len(elem)))
        states = np.broadcast_to(flat_rest, (len(compact), n * N_ELEMENTS)).copy()
        states[:, elem] = compact
        states = states.reshape(len(compact), n, N_ELEMENTS)
        tvec = np.concatenate(times) if times else np.empty(0)
    return TraceSet(integrals, direction, cfg.t_end, cfg.dt, tvec, states, rest)


def simulate_forward(topology: NetworkTopology, coeffs, drives: DriveSet,
                     cfg: SimulationConfig = SimulationConfig(), skip_sinks: bool = False) -> TraceSet:
    """Drive the external inputs and integrate the forward dynamics."""
    return _simulate(topology, coeffs, drives, cfg, reverse=False, skip_sinks=skip_sinks)


def simulate_backward(topology: NetworkTopology, coeffs, error_drives: DriveSet,
                      cfg: SimulationConfig = SimulationConfig(), skip_sinks: bool = False) -> TraceSet:
    """Inject at the external outputs and integrate the reversed dynamics.

    ``skip_sinks`` leaves neurons that emit nothing in the backward
    direction (layer 0) at rest; every other trace is unaffected.
    """
    return _simulate(topology, coeffs, error_drives, cfg, reverse=True, skip_sinks=skip_sinks)


def simulate(topology: NetworkTopology, coeffs, drives: DriveSet,
             cfg: SimulationConfig = SimulationConfig(), skip_sinks: bool = False) -> TraceSet:
    """Run in whichever direction ``topology.reversed`` selects."""
    return _simulate(topology, coeffs, drives, cfg, reverse=topology.reversed, skip_sinks=skip_sinks)


def output_integrals(traces: TraceSet, topology: NetworkTopology) -> np.ndarray:
    return traces.flat[topology.output_index].copy()


def classify(outputs) -> int:
    """Index of the largest output; ties go to the lowest index."""
    return int(np.argmax(np.asarray(outputs)))


def write_trace_csv(traces: TraceSet, path) -> None:
    """One row per (t, neuron, element) with the state E and deviation D."""
    if traces.states is None:
        raise ValueError("traces were recorded without record_full_traces")
    n_neurons = traces.states.shape[1]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "neuron", "element", "E", "D"])
        for t, frame in zip(traces.times, traces.states):
            dev = frame - traces.rest
            for neuron in range(n_neurons):
                for element in range(N_ELEMENTS):
                    writer.writerow([repr(float(t)), neuron, element,
                                     repr(float(frame[neuron, element])), repr(float(dev[neuron, element]))])
