import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentum_sync.momentum_rules import HyperParams
from momentum_sync.theory import (
    GateViolation,
    ThresholdViolation,
    bound_decentralized,
    bound_polyak,
    comm_rounds,
    gate_decentralized,
    gate_nesterov,
    gate_polyak,
    max_interval,
    min_horizon_every_step,
    min_horizon_reduced_comm,
)


def _hp(gamma, beta, interval=1, horizon=1000):
    return HyperParams(gamma=gamma, beta=beta, interval=interval, horizon=horizon)


class TestGatePolyak:
    def test_worked_gamma_limit(self):
        gate = gate_polyak(_hp(1e-3, 0.9), L=1.0)
        assert gate.gamma_limit == pytest.approx(0.01 / 1.9, rel=1e-12)
        assert gate.ok

    def test_beta_zero_simplification(self):
        gate = gate_polyak(_hp(0.5, 0.0), L=1.0)
        assert gate.gamma_limit == pytest.approx(1.0, rel=1e-12)
        assert gate.interval_limit == int(1.0 / (6 * 0.5))

    def test_worked_interval_floor(self):
        gate = gate_polyak(_hp(5e-3, 0.9, interval=3), L=1.0)
        assert gate.interval_limit == 3
        assert gate.ok
        assert not gate_polyak(_hp(5e-3, 0.9, interval=4), L=1.0).ok

    def test_violations_are_named(self):
        gate = gate_polyak(_hp(1.0, 0.9, interval=50), L=1.0)
        assert not gate.ok
        assert any("gamma exceeds" in v for v in gate.violations)
        assert any("interval exceeds" in v for v in gate.violations)


class TestGateNesterov:
    def test_beta_zero_matches_polyak(self):
        a = gate_polyak(_hp(0.3, 0.0), L=2.0)
        b = gate_nesterov(_hp(0.3, 0.0), L=2.0)
        assert a.gamma_limit == b.gamma_limit
        assert a.interval_limit == b.interval_limit

    def test_worked_gamma_limit(self):
        gate = gate_nesterov(_hp(1e-3, 0.9), L=1.0)
        assert gate.gamma_limit == pytest.approx(0.01 / 1.729, rel=1e-12)

    def test_violation_string(self):
        gate = gate_nesterov(_hp(1.0, 0.9), L=1.0)
        assert "gamma exceeds (1-beta)^2/(L(1+beta^3))" in gate.violations


class TestGateDecentralized:
    def test_rho_zero_beta_zero(self):
        gate = gate_decentralized(_hp(0.1, 0.0), L=1.0, rho=0.0)
        assert gate.gamma_limit == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_poor_mixing_shrinks_gate(self):
        limits = [
            gate_decentralized(_hp(1e-9, 0.0), L=1.0, rho=r).gamma_limit
            for r in (0.0, 0.5, 0.9, 0.99)
        ]
        assert all(a > b for a, b in zip(limits, limits[1:]))
        assert limits[-1] < 1e-3

    def test_worked_example(self):
        gate = gate_decentralized(_hp(1e-4, 0.9), L=1.0, rho=0.25)
        expect = min(0.01 * 0.25 / 6.0, 0.1 * 0.5 / 4.0)
        assert gate.gamma_limit == pytest.approx(expect, rel=1e-12)
        assert gate.gamma_limit == pytest.approx(4.1666666666e-4, rel=1e-9)


class TestBoundPolyak:
    def test_noiseless_homogeneous_single_term(self):
        hp = _hp(1e-3, 0.5, interval=10, horizon=100)
        rep = bound_polyak(hp, L=1.0, sigma=0.0, kappa=0.0, N=4, f0_minus_fstar=3.0)
        assert rep.term_breakdown[1] == 0.0
        assert rep.term_breakdown[2] == 0.0
        assert rep.term_breakdown[3] == 0.0
        assert rep.bound_value == rep.term_breakdown[0]

    def test_linear_speedup_substitution(self):
        # beta = 0, gamma = sqrt(N/T), I = 1, kappa = 0 collapses to
        # 2 (f0 - f*) / sqrt(NT) + L sigma^2 / sqrt(NT) + 4 L^2 sigma^2 N / T
        n, t, L, sigma, f0 = 4, 10_000, 1.0, 1.0, 2.0
        hp = _hp(math.sqrt(n) / math.sqrt(t), 0.0, interval=1, horizon=t)
        rep = bound_polyak(hp, L, sigma, 0.0, n, f0)
        root_nt = math.sqrt(n * t)
        assert rep.term_breakdown[0] == pytest.approx(2 * f0 / root_nt, rel=1e-12)
        assert rep.term_breakdown[1] == pytest.approx(L * sigma**2 / root_nt, rel=1e-12)
        assert rep.term_breakdown[2] == pytest.approx(4 * L**2 * sigma**2 * n / t, rel=1e-12)
        assert rep.term_breakdown[3] == 0.0

    def test_doubling_interval_quadruples_heterogeneity_term(self):
        kwargs = dict(L=1.0, sigma=0.5, kappa=0.7, N=2, f0_minus_fstar=1.0)
        a = bound_polyak(_hp(1e-3, 0.5, interval=2, horizon=100), **kwargs)
        b = bound_polyak(_hp(1e-3, 0.5, interval=4, horizon=100), **kwargs)
        assert b.term_breakdown[3] == pytest.approx(4 * a.term_breakdown[3], rel=1e-12)

    def test_value_is_sum_of_terms(self):
        rep = bound_polyak(_hp(1e-3, 0.9), L=2.0, sigma=1.0, kappa=0.3, N=8, f0_minus_fstar=5.0)
        assert rep.bound_value == pytest.approx(sum(rep.term_breakdown), rel=1e-15)
        assert rep.bound_value >= 0.0

    def test_gate_enforced(self):
        with pytest.raises(GateViolation):
            bound_polyak(_hp(1.0, 0.9), L=1.0, sigma=0.0, kappa=0.0, N=1, f0_minus_fstar=1.0)
        rep = bound_polyak(
            _hp(1.0, 0.9), L=1.0, sigma=0.0, kappa=0.0, N=1, f0_minus_fstar=1.0,
            enforce_gate=False,
        )
        assert not rep.gate.ok

    def test_nesterov_flag_changes_gate_not_terms(self):
        hp = _hp(1e-3, 0.9, interval=2, horizon=100)
        a = bound_polyak(hp, 1.0, 1.0, 0.5, 4, 1.0)
        b = bound_polyak(hp, 1.0, 1.0, 0.5, 4, 1.0, nesterov=True)
        assert a.term_breakdown == b.term_breakdown
        assert a.gate.gamma_limit != b.gate.gamma_limit


class TestBoundDecentralized:
    def test_trivial_single_term(self):
        hp = _hp(1e-3, 0.5, horizon=100)
        rep = bound_decentralized(hp, L=1.0, sigma=0.0, kappa=0.0, rho=0.25, N=4, f0_minus_fstar=2.0)
        assert rep.bound_value == rep.term_breakdown[0]

    def test_rho_zero_matches_interval_one_shape(self):
        hp = _hp(1e-3, 0.5, interval=1, horizon=100)
        dec = bound_decentralized(hp, 1.0, 1.0, 0.5, 0.0, 4, 2.0)
        par = bound_polyak(hp, 1.0, 1.0, 0.5, 4, 2.0)
        assert dec.term_breakdown[0] == par.term_breakdown[0]
        assert dec.term_breakdown[1] == par.term_breakdown[1]
        # variance terms agree up to the stated constants (4 vs 4, 4 vs 9 at I=1)
        assert dec.term_breakdown[2] == pytest.approx(par.term_breakdown[2], rel=1e-12)
        assert dec.term_breakdown[3] == pytest.approx(par.term_breakdown[3] * 4.0 / 9.0, rel=1e-12)

    def test_speedup_order(self):
        # gamma = sqrt(N/T): every term decays at least as fast as 1/sqrt(NT) + N/T
        L, sigma, kappa, rho = 1.0, 1.0, 0.5, 0.25
        for n, t in [(2, 10**5), (8, 10**6), (16, 10**7)]:
            hp = _hp(math.sqrt(n / t), 0.1, horizon=t)
            rep = bound_decentralized(hp, L, sigma, kappa, rho, n, 1.0, enforce_gate=False)
            envelope = 40.0 / math.sqrt(n * t) + 40.0 * n / t
            assert rep.bound_value <= envelope

    def test_comm_rounds_formula(self):
        hp = _hp(1e-4, 0.0, horizon=501)
        rep = bound_decentralized(hp, 1.0, 1.0, 0.0, 0.25, 4, 1.0)
        assert rep.comm_rounds_formula == 500


class TestMaxInterval:
    def test_worked_kappa_zero(self):
        assert max_interval(4, 10**6, 1.0, 0.0, kappa_is_zero=True) == 20

    def test_worked_kappa_nonzero(self):
        assert max_interval(4, 10**6, 1.0, 0.0, kappa_is_zero=False) == 1

    def test_single_worker_keeps_sqrt_t_over_six(self):
        t = 10**6
        assert max_interval(1, t, 1.0, 0.0, kappa_is_zero=True) == math.isqrt(t // 36)

    def test_threshold_violation(self):
        with pytest.raises(ThresholdViolation):
            max_interval(100, 10, 1.0, 0.0, kappa_is_zero=True)

    def test_interval_below_one_rejected(self):
        # beta large enough makes the formula floor to zero
        with pytest.raises(ThresholdViolation):
            max_interval(8, 40_000, 1.0, 0.9, kappa_is_zero=True)

    def test_exactness_on_perfect_squares(self):
        # (1/6) * sqrt(T) / N^(3/2) with T = 36^2 * 64, N = 4: exactly 36 * 8 / (6 * 8) = 6
        t = 36 * 36 * 64
        assert max_interval(4, t, 1.0, 0.0, kappa_is_zero=True) == (36 * 8) // (6 * 8)


class TestCommRounds:
    def test_every_step(self):
        assert comm_rounds(4, 1000, "every_step").count == 999
        assert comm_rounds(4, 1000, "every_step").order == "O(T)"

    def test_decentralized(self):
        assert comm_rounds(4, 10**6, "decentralized").count == 10**6 - 1

    def test_worked_kappa_zero(self):
        out = comm_rounds(4, 10**6, "kappa_zero", L=1.0, beta=0.0)
        assert out.count == (10**6 - 1) // 20 == 49999
        assert out.order == "O(N^(3/2) T^(1/2))"

    def test_kappa_nonzero_order(self):
        out = comm_rounds(4, 10**6, "kappa_nonzero", L=1.0, beta=0.0)
        assert out.order == "O(N^(3/4) T^(3/4))"
        assert out.count == 10**6 - 1  # interval floors to 1 here

    def test_requires_constants_for_interval_regimes(self):
        with pytest.raises(ValueError):
            comm_rounds(4, 10**6, "kappa_zero")
        with pytest.raises(ValueError):
            comm_rounds(4, 10**6, "nonsense", L=1.0, beta=0.0)


class TestMonotonicity:
    @given(
        st.floats(0.0, 0.95), st.floats(0.0, 0.95),
        st.floats(0.1, 10.0), st.floats(0.1, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_gamma_limits_nonincreasing_in_beta_and_l(self, b1, b2, l1, l2):
        lo_b, hi_b = sorted((b1, b2))
        lo_l, hi_l = sorted((l1, l2))
        hp_lo = _hp(1e-12, lo_b)
        hp_hi = _hp(1e-12, hi_b)
        assert gate_polyak(hp_lo, lo_l).gamma_limit >= gate_polyak(hp_hi, lo_l).gamma_limit
        assert gate_polyak(hp_lo, lo_l).gamma_limit >= gate_polyak(hp_lo, hi_l).gamma_limit
        assert gate_nesterov(hp_lo, lo_l).gamma_limit >= gate_nesterov(hp_hi, lo_l).gamma_limit

    @given(st.floats(0.0, 0.999), st.floats(0.0, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_decentralized_limit_nonincreasing_in_rho(self, r1, r2):
        lo, hi = sorted((r1, r2))
        hp = _hp(1e-12, 0.3)
        assert (
            gate_decentralized(hp, 1.0, lo).gamma_limit
            >= gate_decentralized(hp, 1.0, hi).gamma_limit
        )


class TestCorollaryEnvelope:
    def test_every_term_within_speedup_envelope(self):
        # at the corollary's gamma and interval each term is <= C_i / sqrt(NT)
        # with C_i independent of N and T (kappa = 0 case)
        L, sigma, beta, f0 = 1.0, 1.0, 0.5, 2.0
        c1 = 2.0 * (1 - beta) * f0
        c2 = L * sigma**2 / (1 - beta) ** 2
        c3 = (2.0 / 3.0) * L * sigma**2 / (1 - beta)
        for n, t in [(1, 10**4), (4, 10**6), (8, 10**8), (16, 10**8)]:
            interval = max_interval(n, t, L, beta, kappa_is_zero=True)
            hp = _hp(math.sqrt(n / t), beta, interval=interval, horizon=t)
            rep = bound_polyak(hp, L, sigma, 0.0, n, f0)
            root = math.sqrt(n * t)
            assert rep.term_breakdown[0] <= c1 / root * (1 + 1e-12)
            assert rep.term_breakdown[1] <= c2 / root * (1 + 1e-12)
            assert rep.term_breakdown[2] <= c3 / root * (1 + 1e-12)

    def test_kappa_nonzero_heterogeneity_term_envelope(self):
        # fourth term <= kappa^2 / (4 sqrt(NT)) at I = (1-beta) T^(1/4) / (6 L N^(3/4))
        L, sigma, beta, kappa, f0 = 1.0, 1.0, 0.0, 0.8, 2.0
        for n, t in [(2, 10**7), (4, 10**8)]:
            interval = max_interval(n, t, L, beta, kappa_is_zero=False)
            hp = _hp(math.sqrt(n / t), beta, interval=interval, horizon=t)
            rep = bound_polyak(hp, L, sigma, kappa, n, f0)
            assert rep.term_breakdown[3] <= kappa**2 / (4 * math.sqrt(n * t)) * (1 + 1e-12)


class TestHorizonThresholds:
    def test_corollary_one_threshold(self):
        assert min_horizon_every_step(4, 1.0, 0.0) == 144

    def test_corollary_two_threshold(self):
        # (1+beta)^2 L^2 N / (1-beta)^4 at beta = 0: just N L^2
        assert min_horizon_reduced_comm(4, 1.0, 0.0) == 4
        assert min_horizon_reduced_comm(1, 2.0, 0.0) == 4
