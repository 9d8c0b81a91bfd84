import numpy as np
import pytest

from momentum_sync.momentum_rules import (
    HyperParams,
    WorkerState,
    nesterov_step,
    nesterov_step_two_sequence,
    polyak_step,
    polyak_step_single_variable,
    restart_average,
    restart_average_cleared,
)
from momentum_sync.numerics import RngStream, gaussian_vector


def _random_gradients(seed, steps, m):
    s = RngStream(seed, 0)
    return [gaussian_vector(s, m, 1.0) for _ in range(steps)]


def _rel_dev(a, b):
    scale = max(1e-30, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


class TestHyperParams:
    def test_validation(self):
        HyperParams(gamma=0.1, beta=0.0, interval=1, horizon=1)
        with pytest.raises(ValueError):
            HyperParams(gamma=0.0, beta=0.0)
        with pytest.raises(ValueError):
            HyperParams(gamma=0.1, beta=1.0)
        with pytest.raises(ValueError):
            HyperParams(gamma=0.1, beta=-0.1)
        with pytest.raises(ValueError):
            HyperParams(gamma=0.1, beta=0.5, interval=0)


class TestPolyakStep:
    def test_beta_zero_is_vanilla_sgd(self):
        hp = HyperParams(gamma=0.2, beta=0.0)
        st = WorkerState.initial(np.array([1.0, -1.0]))
        g = np.array([0.5, 0.5])
        out = polyak_step(st, g, hp)
        assert np.array_equal(out.u, g)
        assert np.array_equal(out.x, st.x - 0.2 * g)

    def test_worked_example(self):
        # beta 0.9 / gamma 0.3 at a fresh buffer: u' = g, x' = x - 0.3 g
        hp = HyperParams(gamma=0.3, beta=0.9)
        st = WorkerState.initial(np.array([0.0, 0.0]))
        out = polyak_step(st, np.array([1.0, 0.0]), hp)
        assert np.array_equal(out.u, np.array([1.0, 0.0]))
        assert np.allclose(out.x, np.array([-0.3, 0.0]), atol=1e-16)
        assert np.array_equal(out.x_prev, st.x)

    def test_zero_gradient_zero_buffer_is_fixed_point(self):
        hp = HyperParams(gamma=0.3, beta=0.9)
        st = WorkerState.initial(np.array([2.0, 3.0]))
        out = polyak_step(st, np.zeros(2), hp)
        assert np.array_equal(out.x, st.x)
        assert np.array_equal(out.u, np.zeros(2))

    def test_dimension_mismatch(self):
        hp = HyperParams(gamma=0.3, beta=0.9)
        with pytest.raises(ValueError):
            polyak_step(WorkerState.initial(np.zeros(2)), np.zeros(3), hp)


class TestNesterovStep:
    def test_beta_zero_matches_polyak(self):
        hp = HyperParams(gamma=0.2, beta=0.0)
        st = WorkerState.initial(np.array([1.0, -1.0]))
        g = np.array([0.5, -0.25])
        assert np.array_equal(nesterov_step(st, g, hp).x, polyak_step(st, g, hp).x)

    def test_worked_example(self):
        # beta 1/2, gamma 1, u = 0, g = 2: u' = 2, v' = 3, x' = -3
        hp = HyperParams(gamma=1.0, beta=0.5)
        st = WorkerState.initial(np.array([0.0]))
        out = nesterov_step(st, np.array([2.0]), hp)
        assert np.array_equal(out.u, np.array([2.0]))
        assert np.array_equal(out.v, np.array([3.0]))
        assert np.array_equal(out.x, np.array([-3.0]))

    def test_zero_gradient_zero_buffer_unchanged(self):
        hp = HyperParams(gamma=1.0, beta=0.5)
        st = WorkerState.initial(np.array([4.0]))
        out = nesterov_step(st, np.zeros(1), hp)
        assert np.array_equal(out.x, st.x)


class TestEquivalences:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
    def test_polyak_buffer_vs_single_variable(self, seed, beta):
        hp = HyperParams(gamma=0.05, beta=beta)
        grads = _random_gradients(seed, 50, 8)
        st = WorkerState.initial(np.ones(8))
        x, x_prev = np.ones(8), np.ones(8)  # x^(-1) = x^(0)
        for g in grads:
            st = polyak_step(st, g, hp)
            x, x_prev = polyak_step_single_variable(x, x_prev, g, hp), x
            assert _rel_dev(st.x, x) <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
    def test_nesterov_buffer_vs_two_sequence(self, seed, beta):
        # the two-sequence form seeds y^(0) = 0, which matches the buffer
        # form exactly from a zero initial solution
        hp = HyperParams(gamma=0.05, beta=beta)
        grads = _random_gradients(100 + seed, 50, 8)
        st = WorkerState.initial(np.zeros(8))
        x, y_prev = np.zeros(8), np.zeros(8)
        for g in grads:
            st = nesterov_step(st, g, hp)
            y_prev, x = nesterov_step_two_sequence(y_prev, x, g, hp)
            assert _rel_dev(st.x, x) <= 1e-12

    def test_two_sequence_trivial_cases(self):
        hp = HyperParams(gamma=0.3, beta=0.7)
        y, x = nesterov_step_two_sequence(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]), hp)
        assert np.allclose(y, [-0.3, 0.0])
        # zero gradient from x = y_prev reproduces y_prev: zero correction
        y2, x2 = nesterov_step_two_sequence(y, y, np.zeros(2), hp)
        assert np.array_equal(y2, y)
        assert np.array_equal(x2, y2)

    @pytest.mark.parametrize("seed", range(3))
    def test_beta_zero_options_coincide(self, seed):
        hp = HyperParams(gamma=0.1, beta=0.0)
        grads = _random_gradients(seed, 30, 4)
        a = WorkerState.initial(np.ones(4))
        b = WorkerState.initial(np.ones(4))
        for g in grads:
            a = polyak_step(a, g, hp)
            b = nesterov_step(b, g, hp)
            assert np.array_equal(a.x, b.x)

    def test_increment_invariant_under_gradient_rescale(self):
        # from u = 0, the x-increment -gamma u' is unchanged by g -> c g, gamma -> gamma/c
        g = np.array([2.0, -3.0])
        c = 8.0
        hp_a = HyperParams(gamma=0.4, beta=0.6)
        hp_b = HyperParams(gamma=0.4 / c, beta=0.6)
        st = WorkerState.initial(np.array([1.0, 1.0]))
        assert np.allclose(
            polyak_step(st, g, hp_a).x, polyak_step(st, c * g, hp_b).x, atol=1e-15
        )


class TestRestart:
    def _states(self):
        a = WorkerState(
            x=np.array([1.0, 0.0]), u=np.array([0.0, 2.0]),
            v=np.zeros(2), x_prev=np.zeros(2), y_prev=np.zeros(2),
        )
        b = WorkerState(
            x=np.array([3.0, 0.0]), u=np.array([0.0, 0.0]),
            v=np.zeros(2), x_prev=np.zeros(2), y_prev=np.zeros(2),
        )
        return [a, b]

    def test_already_equal_states_unchanged(self):
        st = WorkerState.initial(np.array([2.0, -1.0]))
        out = restart_average([st, st, st])
        for s in out:
            assert np.array_equal(s.x, st.x)
            assert np.array_equal(s.u, st.u)

    def test_worked_average(self):
        out = restart_average(self._states())
        for s in out:
            assert np.array_equal(s.x, np.array([2.0, 0.0]))
            assert np.array_equal(s.u, np.array([0.0, 1.0]))
            assert np.array_equal(s.x_prev, np.array([2.0, 0.0]))

    def test_exact_consensus_after_restart(self):
        out = restart_average(self._states())
        xbar = out[0].x
        assert sum(float(np.sum((s.x - xbar) ** 2)) for s in out) == 0.0

    def test_cleared_zeroes_buffers(self):
        out = restart_average_cleared(self._states())
        for s in out:
            assert np.array_equal(s.x, np.array([2.0, 0.0]))
            assert np.array_equal(s.u, np.zeros(2))

    def test_cleared_matches_average_when_buffers_zero(self):
        states = [WorkerState.initial(np.array([1.0, 2.0])), WorkerState.initial(np.array([3.0, 4.0]))]
        a = restart_average(states)
        b = restart_average_cleared(states)
        for s, t in zip(a, b):
            assert np.array_equal(s.x, t.x)
            assert np.array_equal(s.u, t.u)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            restart_average([])
