"""Single Wuxing neuron: five elements coupled on a fixed cycle.

Element ``j`` is fed by element ``j-1`` (growth, ``k1``), decays at rate
``k2`` and is inhibited through ``k3`` by element ``j-2``; all offsets wrap
modulo 5.  The reversed system keeps the same couplings but swaps cause and
effect, so element ``j`` is fed by ``j+1`` and inhibited by ``j+2`` using the
parameters that belong to those elements.

All functions broadcast over leading axes: a state of shape ``(n, 5)`` holds
``n`` neurons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import FixedPointNotFoundError, NumericOverflowError

N_ELEMENTS = 5

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class NeuronParams:
    """Per-element growth (k1), decay (k2) and inhibition (k3) coefficients."""

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            arr = np.array(np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (N_ELEMENTS,)))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.k3 <= 0):
            raise ValueError("k3 entries must be > 0")
        if np.any(self.k1 < 0) or np.any(self.k2 < 0):
            raise ValueError("k1 and k2 entries must be >= 0")

    @classmethod
    def uniform(cls, k1: float = 1.0, k2: float = 0.5, k3: float = 0.5) -> NeuronParams:
        return cls(np.full(N_ELEMENTS, k1), np.full(N_ELEMENTS, k2), np.full(N_ELEMENTS, k3))

    @property
    def is_uniform(self) -> bool:
        return all(np.all(v == v[0]) for v in (self.k1, self.k2, self.k3))

    def __eq__(self, other):
        if not isinstance(other, NeuronParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("k1", "k2", "k3"))

    def __hash__(self):
        return hash((self.k1.tobytes(), self.k2.tobytes(), self.k3.tobytes()))

    def to_dict(self) -> dict:
        return {"k1": self.k1.tolist(), "k2": self.k2.tolist(), "k3": self.k3.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NeuronParams:
        return cls(d["k1"], d["k2"], d["k3"])


def _check_finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        flat = np.flatnonzero(~np.isfinite(values))[0]
        raise NumericOverflowError(
            f"non-finite derivative at element {flat % N_ELEMENTS}", index=int(flat % N_ELEMENTS)
        )
    return values


def forward_derivative(state, params: NeuronParams, drive=0.0) -> np.ndarray:
    """dE_j/dt = k1_j E_{j-1} - k2_j E_j - k3_j E_j E_{j-2} + u_j."""
    e = np.asarray(state, dtype=float)
    prev1 = np.roll(e, 1, axis=-1)
    prev2 = np.roll(e, 2, axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        out = params.k1 * prev1 - params.k2 * e - params.k3 * e * prev2 + drive
    return _check_finite(out)


def backward_derivative(state, params: NeuronParams, drive=0.0) -> np.ndarray:
    """Reversed cycle: dE_j/dt = k1_{j+1} E_{j+1} - k2_j E_j - k3_{j+2} E_j E_{j+2} + u_j."""
    e = np.asarray(state, dtype=float)
    next1 = np.roll(e, -1, axis=-1)
    next2 = np.roll(e, -2, axis=-1)
    k1n = np.roll(params.k1, -1)
    k3n = np.roll(params.k3, -2)
    with np.errstate(over="ignore", invalid="ignore"):
        out = k1n * next1 - params.k2 * e - k3n * e * next2 + drive
    return _check_finite(out)


def _jacobian(e: np.ndarray, params: NeuronParams, reverse: bool) -> np.ndarray:
    jac = np.zeros((N_ELEMENTS, N_ELEMENTS))
    for j in range(N_ELEMENTS):
        if reverse:
            a, b = (j + 1) % N_ELEMENTS, (j + 2) % N_ELEMENTS
            jac[j, a] += params.k1[a]
            jac[j, j] -= params.k2[j] + params.k3[b] * e[b]
            jac[j, b] -= params.k3[b] * e[j]
        else:
            a, b = (j - 1) % N_ELEMENTS, (j - 2) % N_ELEMENTS
            jac[j, a] += params.k1[j]
            jac[j, j] -= params.k2[j] + params.k3[j] * e[b]
            jac[j, b] -= params.k3[j] * e[j]
    return jac


def fixed_point(params: NeuronParams, reverse: bool = False,
                tol: float = FIXED_POINT_TOL, max_iter: int = FIXED_POINT_MAX_ITER) -> np.ndarray:
    """Rest state B0 of the zero-drive system.

    Equal parameters give the closed form ``(k1 - k2) / k3`` on every element,
    shared by the forward and reversed systems.  Otherwise Newton's method is
    seeded at the closed form evaluated with the mean parameters.
    """
    if params.is_uniform:
        return np.full(N_ELEMENTS, (params.k1[0] - params.k2[0]) / params.k3[0])

    deriv = backward_derivative if reverse else forward_derivative
    e = np.full(N_ELEMENTS, (params.k1.mean() - params.k2.mean()) / params.k3.mean())
    for _ in range(max_iter):
        try:
            resid = deriv(e, params)
        except NumericOverflowError:
            break
        if np.max(np.abs(resid)) < tol:
            return e
        delta = np.linalg.solve(_jacobian(e, params, reverse), -resid)
        e = e + delta
    raise FixedPointNotFoundError(f"Newton did not converge within {max_iter} iterations")


def deviation(state, fp) -> np.ndarray:
    """Signal carried by a neuron: distance from its rest state."""
    return np.asarray(state, dtype=float) - np.asarray(fp, dtype=float)


def step(state, derivative_fn: Callable[[np.ndarray], np.ndarray], dt: float,
         method: str = "rk4") -> np.ndarray:
    """Advance ``state`` by one step of classical RK4 (or forward Euler)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(state, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        if method == "euler":
            out = y + dt * derivative_fn(y)
        elif method == "rk4":
            s1 = derivative_fn(y)
            s2 = derivative_fn(_check_finite(y + 0.5 * dt * s1))
            s3 = derivative_fn(_check_finite(y + 0.5 * dt * s2))
            s4 = derivative_fn(_check_finite(y + dt * s3))
            out = y + (dt / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        else:
            raise ValueError(f"unknown integrator {method!r}")
    return _check_finite(out)
