"""Single-neuron dynamics: derivatives, rest state, integrator order."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wuxingnet.dynamics import (
    NeuronParams,
    backward_derivative,
    deviation,
    fixed_point,
    forward_derivative,
    step,
)
from wuxingnet.errors import FixedPointNotFoundError, NumericOverflowError

DEFAULT = NeuronParams.uniform(1.0, 0.5, 0.5)


def forward_by_hand(e, k1, k2, k3, u):
    """Loop form of the forward rule, written independently of the vectorised one."""
    out = []
    for j in range(5):
        out.append(k1[j] * e[(j - 1) % 5] - k2[j] * e[j] - k3[j] * e[j] * e[(j - 2) % 5] + u[j])
    return np.array(out)


def backward_by_hand(e, k1, k2, k3, u):
    out = []
    for j in range(5):
        a, b = (j + 1) % 5, (j + 2) % 5
        out.append(k1[a] * e[a] - k2[j] * e[j] - k3[b] * e[j] * e[b] + u[j])
    return np.array(out)


class TestNeuronParams:
    def test_scalars_broadcast(self):
        p = NeuronParams(1.0, 0.5, 0.5)
        assert p.k1.shape == (5,)
        assert p.is_uniform

    def test_rejects_nonpositive_k3(self):
        with pytest.raises(ValueError):
            NeuronParams(1.0, 0.5, 0.0)

    def test_round_trip_dict(self):
        p = NeuronParams([1, 1, 1, 1, 1.2], 0.5, 0.5)
        assert NeuronParams.from_dict(p.to_dict()) == p
        assert hash(NeuronParams.from_dict(p.to_dict())) == hash(p)


class TestDerivatives:
    def test_forward_hand_values(self):
        # E = (1, 1, 1, 1, 2): element 0 sees E_4 = 2 and E_3 = 1
        e = np.array([1.0, 1.0, 1.0, 1.0, 2.0])
        d = forward_derivative(e, DEFAULT)
        np.testing.assert_allclose(d, [1.0, -0.5, 0.0, 0.0, -1.0], atol=0)

    def test_backward_hand_values(self):
        # element 3 sees E_4 = 2 via k1, element 2 sees E_4 via k3
        e = np.array([1.0, 1.0, 1.0, 1.0, 2.0])
        d = backward_derivative(e, DEFAULT)
        np.testing.assert_allclose(d, [0.0, 0.0, -0.5, 1.0, -1.0], atol=0)

    def test_drive_adds(self):
        e = np.ones(5)
        u = np.array([0.1, 0.0, -0.2, 0.0, 0.3])
        np.testing.assert_allclose(forward_derivative(e, DEFAULT, u), u, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=5, max_size=5),
           st.lists(st.floats(0, 2), min_size=5, max_size=5),
           st.lists(st.floats(0, 2), min_size=5, max_size=5),
           st.lists(st.floats(0.05, 2), min_size=5, max_size=5),
           st.lists(st.floats(-1, 1), min_size=5, max_size=5))
    def test_match_loop_forms(self, e, k1, k2, k3, u):
        p = NeuronParams(k1, k2, k3)
        np.testing.assert_allclose(forward_derivative(e, p, u), forward_by_hand(e, k1, k2, k3, u), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(backward_derivative(e, p, u), backward_by_hand(e, k1, k2, k3, u), rtol=1e-12, atol=1e-12)

    def test_batched_states(self, rng):
        states = rng.normal(1.0, 0.3, size=(7, 5))
        batched = forward_derivative(states, DEFAULT)
        for row, d in zip(states, batched):
            np.testing.assert_array_equal(forward_derivative(row, DEFAULT), d)

    def test_overflow_names_element(self):
        # E_2 * E_0 is fine, E_4 * E_2 overflows in element 4's quadratic term
        e = np.array([1.0, 1.0, 1e200, 1.0, 1e200])
        with pytest.raises(NumericOverflowError) as info:
            forward_derivative(e, DEFAULT)
        assert info.value.index == 4

    def test_linearised_backward_is_transpose(self):
        # at the shared rest state the reversed Jacobian is the transpose of the forward one
        from wuxingnet.dynamics import _jacobian
        p = NeuronParams([1.0, 1.1, 0.9, 1.0, 1.2], [0.5, 0.4, 0.6, 0.5, 0.5], [0.5, 0.6, 0.5, 0.4, 0.5])
        e = np.full(5, 1.0)
        fwd = _jacobian(e, p, reverse=False)
        bwd = _jacobian(e, p, reverse=True)
        np.testing.assert_allclose(bwd.T - fwd, np.diag(np.diag(bwd.T - fwd)), atol=1e-15)


class TestFixedPoint:
    def test_default_params_all_ones(self):
        np.testing.assert_allclose(fixed_point(DEFAULT), np.ones(5), atol=1e-12)
        np.testing.assert_allclose(fixed_point(DEFAULT, reverse=True), np.ones(5), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.6, 3.0), st.floats(0.0, 0.5), st.floats(0.1, 2.0))
    def test_closed_form_is_stationary(self, k1, k2, k3):
        p = NeuronParams.uniform(k1, k2, k3)
        b0 = fixed_point(p)
        np.testing.assert_allclose(b0, (k1 - k2) / k3)
        assert np.max(np.abs(forward_derivative(b0, p))) < 1e-12
        assert np.max(np.abs(backward_derivative(b0, p))) < 1e-12

    def test_newton_on_unequal_params(self):
        p = NeuronParams([1, 1, 1, 1, 1.2], 0.5, 0.5)
        b0 = fixed_point(p)
        assert np.max(np.abs(forward_derivative(b0, p))) < 1e-12
        assert not np.allclose(b0, 1.0)

    def test_newton_reversed(self):
        p = NeuronParams([1, 1, 1, 1, 1.2], 0.5, 0.5)
        b0 = fixed_point(p, reverse=True)
        assert np.max(np.abs(backward_derivative(b0, p))) < 1e-12

    def test_newton_failure_is_reported(self):
        p = NeuronParams([1, 1, 1, 1, 1.2], 0.5, 0.5)
        with pytest.raises(FixedPointNotFoundError):
            fixed_point(p, max_iter=1, tol=1e-300)

    def test_deviation_is_zero_at_rest(self):
        np.testing.assert_array_equal(deviation(fixed_point(DEFAULT), fixed_point(DEFAULT)), np.zeros(5))


class TestIntegrator:
    @staticmethod
    def _decay(dt, method="rk4"):
        y = np.array([1.0])
        for _ in range(int(round(0.1 / dt))):
            y = step(y, lambda s: -s, dt, method)
        return float(y[0])

    def test_rk4_exponential_oracle(self):
        assert abs(self._decay(0.01) - 0.904837) < 1e-6

    def test_rk4_fourth_order(self):
        # from dt = 0.1 the error is near 1e-8, well above float noise for three halvings
        errors = []
        for dt in (0.1, 0.05, 0.025, 0.0125):
            y = np.array([1.0])
            for _ in range(int(round(1.0 / dt))):
                y = step(y, lambda s: -s, dt)
            errors.append(abs(y[0] - math.exp(-1.0)))
        ratios = [a / b for a, b in zip(errors, errors[1:])]
        assert all(r >= 12 for r in ratios), ratios

    def test_euler_first_order(self):
        errors = []
        for dt in (0.1, 0.05, 0.025):
            y = np.array([1.0])
            for _ in range(int(round(1.0 / dt))):
                y = step(y, lambda s: -s, dt, "euler")
            errors.append(abs(y[0] - math.exp(-1.0)))
        assert 1.8 < errors[0] / errors[1] < 2.2

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            step(np.ones(5), lambda s: s, 0.0)

    def test_bounded_under_small_drives(self, rng):
        # drives within +-0.25 on any four elements never leave a bounded box
        worst = 0.0
        for _ in range(100):
            u = np.zeros(5)
            u[rng.permutation(5)[:4]] = rng.uniform(-0.25, 0.25, 4)
            e = np.ones(5)
            for _ in range(200):
                e = step(e, lambda s: forward_derivative(s, DEFAULT, u), 0.1)
            worst = max(worst, float(np.max(np.abs(e - 1.0))))
        assert worst < 1.0

    def test_returns_to_rest_after_drive(self):
        u = np.array([0.2, 0.0, 0.1, 0.0, 0.0])
        e = np.ones(5)
        for _ in range(100):
            e = step(e, lambda s: forward_derivative(s, DEFAULT, u), 0.1)
        for _ in range(600):
            e = step(e, lambda s: forward_derivative(s, DEFAULT), 0.1)
        np.testing.assert_allclose(e, 1.0, atol=1e-6)
