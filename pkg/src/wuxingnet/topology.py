"""Layered sparse networks of Wuxing neurons.

Every neuron exposes five interfaces, one per element.  Without fan-in
adders an interface plays exactly one role: it receives one connection,
emits one connection, or is bound to an external input/output.  Neuron ids
are global and layer-major; flat interface index is ``neuron * 5 + element``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import N_ELEMENTS, NeuronParams
from .errors import TopologyError

SCHEMA_VERSION = 1

MODEL_LAYERS = {
    "MODEL1": (784, 839, 283, 96, 32, 10),
    "MODEL2": (784, 1048, 353, 119, 40, 10),
}
# per-layer scalars broadcast to all five elements of every neuron
MODEL_K = (1.0, 0.5, 0.5)


@dataclass(frozen=True)
class Connection:
    src_neuron: int
    src_element: int
    dst_neuron: int
    dst_element: int
    coeff: float = 1.0

    @property
    def src(self) -> int:
        return self.src_neuron * N_ELEMENTS + self.src_element

    @property
    def dst(self) -> int:
        return self.dst_neuron * N_ELEMENTS + self.dst_element


@dataclass(frozen=True)
class NetworkTopology:
    layer_sizes: tuple[int, ...]
    params: tuple[NeuronParams, ...]
    connections: tuple[Connection, ...]
    external_inputs: tuple[tuple[int, int], ...]
    external_outputs: tuple[tuple[int, int], ...]
    fan_in_adders: bool = False
    reversed: bool = False
    coeff_bounds: tuple[float, float] = (-2.0, 2.0)

    @property
    def n_neurons(self) -> int:
        return sum(self.layer_sizes)

    @cached_property
    def layer_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.layer_sizes)]).astype(np.int64)

    @cached_property
    def neuron_layer(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.layer_sizes)), self.layer_sizes)

    def layer_of(self, neuron: int) -> int:
        return int(np.searchsorted(self.layer_offsets, neuron, side="right") - 1)

    @cached_property
    def src_index(self) -> np.ndarray:
        return np.array([c.src for c in self.connections], dtype=np.int64)

    @cached_property
    def dst_index(self) -> np.ndarray:
        return np.array([c.dst for c in self.connections], dtype=np.int64)

    @cached_property
    def gap_of_connection(self) -> np.ndarray:
        return self.neuron_layer[self.src_index // N_ELEMENTS] if self.connections else np.zeros(0, int)

    @cached_property
    def input_index(self) -> np.ndarray:
        return np.array([n * N_ELEMENTS + e for n, e in self.external_inputs], dtype=np.int64)

    @cached_property
    def output_index(self) -> np.ndarray:
        return np.array([n * N_ELEMENTS + e for n, e in self.external_outputs], dtype=np.int64)

    @cached_property
    def element_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """k1, k2, k3 expanded to one value per flat interface."""
        out = []
        for name in ("k1", "k2", "k3"):
            per_layer = [np.tile(getattr(p, name), size) for p, size in zip(self.params, self.layer_sizes)]
            out.append(np.concatenate(per_layer))
        return tuple(out)

    def coefficients(self) -> np.ndarray:
        """A fresh, writable coefficient table in connection order."""
        return np.array([c.coeff for c in self.connections], dtype=float)

    def with_coefficients(self, coeffs) -> NetworkTopology:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (len(self.connections),):
            raise ValueError("coefficient table does not match the connection list")
        conns = tuple(replace(c, coeff=float(v)) for c, v in zip(self.connections, coeffs))
        return replace(self, connections=conns)


@dataclass(frozen=True)
class GapRatio:
    actual: int
    possible: int
    ratio: float


@dataclass(frozen=True)
class LinkRatioReport:
    per_gap: tuple[GapRatio, ...]
    average: float  # pooled: all links over all possible links
    mean_per_gap: float = field(default=0.0)

    def format(self) -> str:
        lines = [f"gap {i}: {g.actual}/{g.possible} = {100 * g.ratio:.4f}%" for i, g in enumerate(self.per_gap)]
        lines.append(f"average LR (pooled): {100 * self.average:.4f}%")
        lines.append(f"mean of per-gap LR: {100 * self.mean_per_gap:.4f}%")
        return "\n".join(lines)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _ordered_slots(rng, neurons, free, slot_fn):
    """First one slot per neuron (neurons in random order), then the rest shuffled."""
    first, rest = [], []
    for n in neurons:
        slots = slot_fn(n, free[n])
        if slots:
            first.append(slots[0])
            rest.extend(slots[1:])
    order = rng.permutation(len(rest))
    return first + [rest[i] for i in order]


def build_random(layer_sizes: Sequence[int], params: Sequence[NeuronParams] | NeuronParams | None = None,
                 seed: int = 0, fan_in_adders: bool = False, max_fan_in: int = 4,
                 max_connections: Sequence[int | None] | int | None = None,
                 coeff_init: float = 1.0, coeff_jitter: float = 0.0,
                 coeff_bounds: tuple[float, float] = (-2.0, 2.0)) -> NetworkTopology:
    """Randomly wire adjacent layers through free interfaces.

    Layer-0 neurons each get one external input and last-layer neurons one
    external output.  Each gap is then wired greedily: every upstream neuron
    and every downstream neuron is served once before any gets a second link,
    a hidden downstream neuron keeps one interface back for its own outputs,
    and pairings that would duplicate a neuron pair are skipped while an
    alternative exists.  With adders, hidden neurons receive on a single
    interface that sums up to ``max_fan_in`` links.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise TopologyError("layer sizes must be a non-empty list of positive integers")
    if params is None:
        params = NeuronParams.uniform(*MODEL_K)
    if isinstance(params, NeuronParams):
        params = (params,) * len(sizes)
    params = tuple(params)
    if len(params) != len(sizes):
        raise TopologyError("need one NeuronParams per layer")
    n_gaps = len(sizes) - 1
    if max_connections is None or isinstance(max_connections, int):
        max_connections = [max_connections] * n_gaps
    if len(max_connections) != n_gaps:
        raise TopologyError("max_connections needs one entry per gap")
    if fan_in_adders and max_fan_in < 1:
        raise TopologyError("max_fan_in must be >= 1")
    if len(sizes) == 1 and sizes[0] * N_ELEMENTS < 2 * sizes[0]:
        raise TopologyError("not enough interfaces for external bindings")

    rng = _rng(seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    free = {}
    for layer, size in enumerate(sizes):
        for n in range(offsets[layer], offsets[layer] + size):
            free[int(n)] = [int(e) for e in rng.permutation(N_ELEMENTS)]

    external_inputs = tuple((int(n), free[int(n)].pop(0)) for n in range(offsets[0], offsets[1]))
    external_outputs = tuple((int(n), free[int(n)].pop(0)) for n in range(offsets[-2], offsets[-1]))

    connections = []
    for gap in range(n_gaps):
        up = [int(n) for n in rng.permutation(np.arange(offsets[gap], offsets[gap + 1]))]
        down = [int(n) for n in rng.permutation(np.arange(offsets[gap + 1], offsets[gap + 2]))]
        last = gap + 1 == n_gaps

        up_slots = _ordered_slots(rng, up, free, lambda n, f: [(n, e) for e in f])
        if fan_in_adders:
            def down_fn(n, f):
                inputs = f if last else f[:1]
                return [(n, e) for e in inputs for _ in range(max_fan_in)]
        else:
            def down_fn(n, f):
                return [(n, e) for e in (f if last else f[:-1])]
        down_slots = _ordered_slots(rng, down, free, down_fn)

        budget = min(len(up_slots), len(down_slots))
        if max_connections[gap] is not None:
            budget = min(budget, int(max_connections[gap]))

        pairs = set()
        taken = [False] * len(down_slots)
        cursor = 0
        for (un, ue) in up_slots[:budget]:
            while cursor < len(down_slots) and taken[cursor]:
                cursor += 1
            pick = None
            for k in range(cursor, len(down_slots)):
                if not taken[k] and (un, down_slots[k][0]) not in pairs:
                    pick = k
                    break
            if pick is None:
                pick = cursor
            taken[pick] = True
            dn, de = down_slots[pick]
            pairs.add((un, dn))
            connections.append((un, ue, dn, de))
        for un, ue, dn, de in connections[len(connections) - budget:]:
            free[un].remove(ue)
            if de in free[dn]:
                free[dn].remove(de)

    coeffs = np.full(len(connections), float(coeff_init))
    if coeff_jitter:
        coeffs += rng.uniform(-coeff_jitter, coeff_jitter, size=len(connections))
        coeffs = np.clip(coeffs, *coeff_bounds)
    conns = tuple(Connection(un, ue, dn, de, float(c)) for (un, ue, dn, de), c in zip(connections, coeffs))
    return NetworkTopology(sizes, params, conns, external_inputs, external_outputs,
                           fan_in_adders=fan_in_adders, coeff_bounds=tuple(map(float, coeff_bounds)))


def build_named_model(name: str, seed: int = 0) -> NetworkTopology:
    """MODEL1 or MODEL2: k = (1, 0.5, 0.5) everywhere, no adders, coefficients 1."""
    try:
        sizes = MODEL_LAYERS[name.upper()]
    except KeyError:
        raise TopologyError(f"unknown model {name!r}; choose from {sorted(MODEL_LAYERS)}") from None
    return build_random(sizes, NeuronParams.uniform(*MODEL_K), seed=seed)


def link_ratio(topology: NetworkTopology) -> LinkRatioReport:
    """Linked neuron pairs over the n_i * n_(i+1) pairs of a dense gap."""
    sizes = topology.layer_sizes
    layer = topology.neuron_layer
    pairs = {(c.src_neuron, c.dst_neuron) for c in topology.connections}
    counts = Counter(int(layer[s]) for s, _ in pairs)
    gaps = []
    for i in range(len(sizes) - 1):
        possible = sizes[i] * sizes[i + 1]
        actual = counts.get(i, 0)
        gaps.append(GapRatio(actual, possible, actual / possible))
    if not gaps:
        return LinkRatioReport((), 0.0, 0.0)
    pooled = sum(g.actual for g in gaps) / sum(g.possible for g in gaps)
    return LinkRatioReport(tuple(gaps), pooled, float(np.mean([g.ratio for g in gaps])))


def reverse(topology: NetworkTopology) -> NetworkTopology:
    """Same wiring and coefficients; only the signal direction flips."""
    return replace(topology, reversed=not topology.reversed)


def validate(topology: NetworkTopology, n_inputs: int | None = None,
             n_outputs: int | None = None) -> list[str]:
    """Every broken invariant as a human-readable string; empty when valid."""
    problems = []
    sizes = topology.layer_sizes
    if not sizes or any(s < 1 for s in sizes):
        return ["layer sizes must be positive"]
    if len(topology.params) != len(sizes):
        problems.append("params must have one entry per layer")
    n = topology.n_neurons
    layer = topology.neuron_layer
    c_min, c_max = topology.coeff_bounds

    roles: dict[tuple[int, int], list[str]] = {}

    def claim(neuron, element, role):
        if not (0 <= neuron < n) or not (0 <= element < N_ELEMENTS):
            problems.append(f"{role}: interface ({neuron}, {element}) does not exist")
            return
        roles.setdefault((neuron, element), []).append(role)

    for neuron, element in topology.external_inputs:
        if 0 <= neuron < n and layer[neuron] != 0:
            problems.append(f"external input on neuron {neuron} outside layer 0")
        claim(neuron, element, "external-in")
    for neuron, element in topology.external_outputs:
        if 0 <= neuron < n and layer[neuron] != len(sizes) - 1:
            problems.append(f"external output on neuron {neuron} outside the last layer")
        claim(neuron, element, "external-out")
    for k, c in enumerate(topology.connections):
        if 0 <= c.src_neuron < n and 0 <= c.dst_neuron < n and layer[c.src_neuron] + 1 != layer[c.dst_neuron]:
            problems.append(f"connection {k}: neurons {c.src_neuron}->{c.dst_neuron} are not in adjacent layers")
        if not (c_min <= c.coeff <= c_max):
            problems.append(f"connection {k}: coefficient {c.coeff} outside [{c_min}, {c_max}]")
        claim(c.src_neuron, c.src_element, "out")
        claim(c.dst_neuron, c.dst_element, "in")

    for (neuron, element), r in sorted(roles.items()):
        if len(r) == 1:
            continue
        if topology.fan_in_adders and all(x == "in" for x in r):
            continue
        problems.append(f"interface ({neuron}, {element}) used {len(r)} times: {', '.join(r)}")

    if n_inputs is not None and len(topology.external_inputs) != n_inputs:
        problems.append(f"{len(topology.external_inputs)} external inputs, expected {n_inputs}")
    if n_outputs is not None and len(topology.external_outputs) != n_outputs:
        problems.append(f"{len(topology.external_outputs)} external outputs, expected {n_outputs}")
    return problems


def topology_to_dict(topology: NetworkTopology, coeffs=None) -> dict:
    coeffs = topology.coefficients() if coeffs is None else np.asarray(coeffs, dtype=float)
    return {
        "schema_version": SCHEMA_VERSION,
        "layer_sizes": list(topology.layer_sizes),
        "params": [p.to_dict() for p in topology.params],
        "connections": [
            [c.src_neuron, c.src_element, c.dst_neuron, c.dst_element, float(v)]
            for c, v in zip(topology.connections, coeffs)
        ],
        "external_inputs": [list(b) for b in topology.external_inputs],
        "external_outputs": [list(b) for b in topology.external_outputs],
        "fan_in_adders": topology.fan_in_adders,
        "reversed": topology.reversed,
        "coeff_bounds": list(topology.coeff_bounds),
    }


def topology_from_dict(doc: dict) -> NetworkTopology:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise TopologyError(f"unsupported schema_version {doc.get('schema_version')!r}")
    return NetworkTopology(
        layer_sizes=tuple(int(s) for s in doc["layer_sizes"]),
        params=tuple(NeuronParams.from_dict(p) for p in doc["params"]),
        connections=tuple(Connection(int(a), int(b), int(c), int(d), float(v))
                          for a, b, c, d, v in doc["connections"]),
        external_inputs=tuple((int(a), int(b)) for a, b in doc["external_inputs"]),
        external_outputs=tuple((int(a), int(b)) for a, b in doc["external_outputs"]),
        fan_in_adders=bool(doc.get("fan_in_adders", False)),
        reversed=bool(doc.get("reversed", False)),
        coeff_bounds=tuple(float(v) for v in doc.get("coeff_bounds", (-2.0, 2.0))),
    )


def dumps(topology: NetworkTopology, coeffs=None, extra: dict | None = None) -> str:
    # json writes floats with repr(), the shortest string that round-trips
    doc = topology_to_dict(topology, coeffs)
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":")) + "\n"


def save(topology: NetworkTopology, path, coeffs=None, extra: dict | None = None) -> None:
    Path(path).write_text(dumps(topology, coeffs, extra), encoding="utf-8")


def load(path) -> NetworkTopology:
    return topology_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
