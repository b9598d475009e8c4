"""Hot loop: integrate a compacted block of coupled Wuxing neurons.

Two interchangeable backends share one contract.  ``numba`` compiles
explicit loops; ``numpy`` is the vectorised fallback used when numba is
missing or ``WUXINGNET_BACKEND=numpy`` is set.

Inputs are compact: only the neurons that take part in a run, numbered
``0..m-1``, flat element index ``i = 5 * neuron + element``.  Connections
are already oriented in the direction of travel (``src`` feeds ``dst``).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

RK4, EULER = 0, 1
DIVERGENCE_LIMIT = 1e6


def _default_backend() -> str:
    wanted = os.environ.get("WUXINGNET_BACKEND", "numba").strip().lower()
    if wanted not in ("numba", "numpy"):
        raise ValueError(f"WUXINGNET_BACKEND must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numba" and numba is None:
        return "numpy"
    return wanted


BACKEND = _default_backend()


def set_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous one."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    previous, BACKEND = BACKEND, name
    return previous


def integrate(state, rest, k1, k2, k3, ext, src, dst, coeff, reverse, dt, n_steps,
              method, integral, record):
    """Advance ``state`` in place for ``n_steps`` and accumulate ``integral``.

    ``integral`` receives the trapezoid sum of ``state - rest``; ``record``
    (shape ``(n_steps + 1, len(state))`` or zero rows) receives the sampled
    trajectory.  Returns ``(-1, -1)`` on success or ``(element, step)`` of
    the first value to leave ``[-DIVERGENCE_LIMIT, DIVERGENCE_LIMIT]``.
    """
    fn = _integrate_numba if BACKEND == "numba" else _integrate_numpy
    bad_elem, bad_step = fn(state, rest, k1, k2, k3, ext, src, dst, coeff, bool(reverse),
                            float(dt), int(n_steps), int(method), integral, record)
    return int(bad_elem), int(bad_step)


# --------------------------------------------------------------------- numpy

def _derivative_numpy(e, rest, k1, k2, k3, k1n, k3n, ext, src, dst, coeff, reverse):
    u = ext.copy()
    if len(src):
        u += np.bincount(dst, weights=coeff * (e[src] - rest[src]), minlength=len(e))
    e5 = e.reshape(-1, 5)
    if reverse:
        a = np.roll(e5, -1, axis=1).ravel()
        b = np.roll(e5, -2, axis=1).ravel()
        return k1n * a - k2 * e - k3n * e * b + u
    a = np.roll(e5, 1, axis=1).ravel()
    b = np.roll(e5, 2, axis=1).ravel()
    return k1 * a - k2 * e - k3 * e * b + u


def _integrate_numpy(state, rest, k1, k2, k3, ext, src, dst, coeff, reverse, dt, n_steps,
                     method, integral, record):
    k1n = np.roll(k1.reshape(-1, 5), -1, axis=1).ravel()
    k3n = np.roll(k3.reshape(-1, 5), -2, axis=1).ravel()
    args = (rest, k1, k2, k3, k1n, k3n, ext, src, dst, coeff, reverse)
    recording = record.shape[0] > 0
    if recording:
        record[0] = state
    e = state.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_steps):
            d_old = e - rest
            s1 = _derivative_numpy(e, *args)
            if method == EULER:
                e = e + dt * s1
            else:
                s2 = _derivative_numpy(e + 0.5 * dt * s1, *args)
                s3 = _derivative_numpy(e + 0.5 * dt * s2, *args)
                s4 = _derivative_numpy(e + dt * s3, *args)
                e = e + (dt / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
            bad = ~(np.abs(e) <= DIVERGENCE_LIMIT)
            if bad.any():
                state[:] = e
                return int(np.flatnonzero(bad)[0]), s + 1
            integral += 0.5 * dt * (d_old + (e - rest))
            if recording:
                record[s + 1] = e
    state[:] = e
    return -1, -1


# --------------------------------------------------------------------- numba

if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _derivative_nb(e, rest, k1, k2, k3, ext, src, dst, coeff, reverse, out):
        n = e.shape[0]
        for i in range(n):
            out[i] = ext[i]
        for c in range(src.shape[0]):
            out[dst[c]] += coeff[c] * (e[src[c]] - rest[src[c]])
        for base in range(0, n, 5):
            for j in range(5):
                i = base + j
                if reverse:
                    a = base + (j + 1) % 5
                    b = base + (j + 2) % 5
                    out[i] += k1[a] * e[a] - k2[i] * e[i] - k3[b] * e[i] * e[b]
                else:
                    a = base + (j + 4) % 5
                    b = base + (j + 3) % 5
                    out[i] += k1[i] * e[a] - k2[i] * e[i] - k3[i] * e[i] * e[b]

    @numba.njit(cache=True, nogil=True)
    def _integrate_numba(state, rest, k1, k2, k3, ext, src, dst, coeff, reverse, dt, n_steps,
                         method, integral, record):
        n = state.shape[0]
        s1 = np.empty(n)
        s2 = np.empty(n)
        s3 = np.empty(n)
        s4 = np.empty(n)
        tmp = np.empty(n)
        recording = record.shape[0] > 0
        if recording:
            for i in range(n):
                record[0, i] = state[i]
        half = 0.5 * dt
        sixth = dt / 6.0
        for s in range(n_steps):
            _derivative_nb(state, rest, k1, k2, k3, ext, src, dst, coeff, reverse, s1)
            if method == 1:
                for i in range(n):
                    tmp[i] = state[i] + dt * s1[i]
            else:
                for i in range(n):
                    tmp[i] = state[i] + half * s1[i]
                _derivative_nb(tmp, rest, k1, k2, k3, ext, src, dst, coeff, reverse, s2)
                for i in range(n):
                    tmp[i] = state[i] + half * s2[i]
                _derivative_nb(tmp, rest, k1, k2, k3, ext, src, dst, coeff, reverse, s3)
                for i in range(n):
                    tmp[i] = state[i] + dt * s3[i]
                _derivative_nb(tmp, rest, k1, k2, k3, ext, src, dst, coeff, reverse, s4)
                for i in range(n):
                    tmp[i] = state[i] + sixth * (s1[i] + 2.0 * s2[i] + 2.0 * s3[i] + s4[i])
            for i in range(n):
                if not (abs(tmp[i]) <= DIVERGENCE_LIMIT):
                    for k in range(n):
                        state[k] = tmp[k]
                    return i, s + 1
            for i in range(n):
                integral[i] += half * ((state[i] - rest[i]) + (tmp[i] - rest[i]))
                state[i] = tmp[i]
            if recording:
                for i in range(n):
                    record[s + 1, i] = state[i]
        return -1, -1

else:  # pragma: no cover
    _integrate_numba = None
