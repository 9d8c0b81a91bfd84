"""Hyperparameter gates, convergence bounds, and communication-complexity formulas.

Gate and interval comparisons are decided in exact rational arithmetic on the
binary values of the inputs (fractions.Fraction is exact on floats), so a
configuration sitting exactly on a threshold is classified deterministically.
Bound values are reported as floats; they are diagnostics, not gates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Optional

from .momentum_rules import HyperParams

__all__ = [
    "GateReport",
    "BoundReport",
    "CommRounds",
    "GateViolation",
    "ThresholdViolation",
    "gate_polyak",
    "gate_nesterov",
    "gate_decentralized",
    "bound_polyak",
    "bound_decentralized",
    "max_interval",
    "comm_rounds",
    "min_horizon_every_step",
    "min_horizon_reduced_comm",
]


class GateViolation(ValueError):
    """A step-size or interval condition fails; the message names it."""


class ThresholdViolation(ValueError):
    """A corollary's minimum-horizon requirement T >= threshold fails."""


@dataclass(frozen=True)
class GateReport:
    ok: bool
    violations: tuple
    gamma_limit: float
    interval_limit: Optional[int]


@dataclass(frozen=True)
class BoundReport:
    """Evaluated convergence bound: the four additive terms and their sum."""

    gate: GateReport
    bound_value: float
    term_breakdown: tuple
    comm_rounds_formula: int

    def to_dict(self) -> dict:
        return {
            "gate_ok": self.gate.ok,
            "gate_violations": list(self.gate.violations),
            "gamma_limit": self.gate.gamma_limit,
            "interval_limit": self.gate.interval_limit,
            "bound_value": self.bound_value,
            "term_breakdown": list(self.term_breakdown),
            "comm_rounds_formula": self.comm_rounds_formula,
        }


@dataclass(frozen=True)
class CommRounds:
    order: str
    count: int


def _fr(x) -> Fraction:
    return Fraction(x)


def _gate_parallel(hp: HyperParams, L: float, gamma_limit: Fraction, limit_name: str) -> GateReport:
    violations = []
    if _fr(hp.gamma) > gamma_limit:
        violations.append(f"gamma exceeds {limit_name}")
    interval_limit = int((_fr(1) - _fr(hp.beta)) / (6 * _fr(L) * _fr(hp.gamma)))
    if hp.interval > interval_limit:
        violations.append("interval exceeds (1-beta)/(6*L*gamma)")
    return GateReport(
        ok=not violations,
        violations=tuple(violations),
        gamma_limit=float(gamma_limit),
        interval_limit=interval_limit,
    )


def gate_polyak(hp: HyperParams, L: float) -> GateReport:
    """Heavy-ball conditions: gamma <= (1-beta)^2/((1+beta)L), I <= (1-beta)/(6 L gamma)."""
    if L <= 0:
        raise ValueError("L must be positive")
    limit = (_fr(1) - _fr(hp.beta)) ** 2 / ((_fr(1) + _fr(hp.beta)) * _fr(L))
    return _gate_parallel(hp, L, limit, "(1-beta)^2/((1+beta)L)")


def gate_nesterov(hp: HyperParams, L: float) -> GateReport:
    """Look-ahead conditions: gamma <= (1-beta)^2/(L(1+beta^3)), I <= (1-beta)/(6 L gamma)."""
    if L <= 0:
        raise ValueError("L must be positive")
    limit = (_fr(1) - _fr(hp.beta)) ** 2 / (_fr(L) * (_fr(1) + _fr(hp.beta) ** 3))
    return _gate_parallel(hp, L, limit, "(1-beta)^2/(L(1+beta^3))")


def gate_decentralized(hp: HyperParams, L: float, rho: float) -> GateReport:
    """Gossip condition: gamma <= min{(1-beta)^2(1-sqrt(rho))^2/(6L), (1-beta)(1-sqrt(rho))/(4L)}."""
    if L <= 0:
        raise ValueError("L must be positive")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    gap = 1.0 - math.sqrt(rho)
    limit = min((1.0 - hp.beta) ** 2 * gap**2 / (6.0 * L), (1.0 - hp.beta) * gap / (4.0 * L))
    violations = ()
    if hp.gamma > limit:
        violations = (
            "gamma exceeds min{(1-beta)^2(1-sqrt(rho))^2/(6L), (1-beta)(1-sqrt(rho))/(4L)}",
        )
    return GateReport(ok=not violations, violations=violations,
                      gamma_limit=limit, interval_limit=None)


def bound_polyak(
    hp: HyperParams,
    L: float,
    sigma: float,
    kappa: float,
    N: int,
    f0_minus_fstar: float,
    nesterov: bool = False,
    enforce_gate: bool = True,
) -> BoundReport:
    """Parallel-restarted bound: the four-term right-hand side at the run's parameters.

    The displayed constants (4 and 9) of the stated theorems are used for both
    momentum options; only the gamma gate differs between them.
    """
    gate = gate_nesterov(hp, L) if nesterov else gate_polyak(hp, L)
    if enforce_gate and not gate.ok:
        raise GateViolation("; ".join(gate.violations))
    g, b, i, t = hp.gamma, hp.beta, hp.interval, hp.horizon
    one_minus = 1.0 - b
    terms = (
        2.0 * one_minus * f0_minus_fstar / (g * t),
        L * g * sigma**2 / (one_minus**2 * N),
        4.0 * L**2 * g**2 * i * sigma**2 / one_minus**2,
        9.0 * L**2 * g**2 * i**2 * kappa**2 / one_minus**2,
    )
    return BoundReport(
        gate=gate,
        bound_value=float(sum(terms)),
        term_breakdown=terms,
        comm_rounds_formula=(t - 1) // i,
    )


def bound_decentralized(
    hp: HyperParams,
    L: float,
    sigma: float,
    kappa: float,
    rho: float,
    N: int,
    f0_minus_fstar: float,
    enforce_gate: bool = True,
) -> BoundReport:
    """Gossip bound with the explicit constants reached by the convergence proof."""
    gate = gate_decentralized(hp, L, rho)
    if enforce_gate and not gate.ok:
        raise GateViolation("; ".join(gate.violations))
    g, b, t = hp.gamma, hp.beta, hp.horizon
    one_minus = 1.0 - b
    gap = 1.0 - math.sqrt(rho)
    terms = (
        2.0 * one_minus * f0_minus_fstar / (g * t),
        L * g * sigma**2 / (one_minus**2 * N),
        4.0 * L**2 * g**2 * sigma**2 / (one_minus**2 * (1.0 - rho)),
        4.0 * L**2 * g**2 * kappa**2 / (one_minus**2 * gap**2),
    )
    return BoundReport(
        gate=gate,
        bound_value=float(sum(terms)),
        term_breakdown=terms,
        comm_rounds_formula=t - 1,
    )


def min_horizon_every_step(N: int, L: float, beta: float) -> int:
    """Smallest T allowed when syncing every iteration: T >= 36 L^2 N / (1-beta)^2."""
    thr = 36 * _fr(L) ** 2 * N / (_fr(1) - _fr(beta)) ** 2
    return int(math.ceil(thr))


def min_horizon_reduced_comm(N: int, L: float, beta: float) -> int:
    """Smallest T allowed with communication skipping: T >= (1+beta)^2 L^2 N / (1-beta)^4."""
    thr = (_fr(1) + _fr(beta)) ** 2 * _fr(L) ** 2 * N / (_fr(1) - _fr(beta)) ** 4
    return int(math.ceil(thr))


def max_interval(N: int, T: int, L: float, beta: float, kappa_is_zero: bool) -> int:
    """Largest synchronization interval that preserves the linear-speedup rate.

    kappa = 0:  I <= (1-beta)/(6L) * sqrt(T) / N^(3/2)
    kappa != 0: I <= (1-beta)/(6L) * T^(1/4) / N^(3/4)

    Computed exactly via integer square roots; raises if the corollary's
    horizon threshold fails or the formula floors below 1.
    """
    if N < 1 or T < 1:
        raise ValueError("need N >= 1 and T >= 1")
    if T < min_horizon_reduced_comm(N, L, beta):
        raise ThresholdViolation(
            f"T = {T} is below the threshold (1+beta)^2 L^2 N / (1-beta)^4 "
            f"= {min_horizon_reduced_comm(N, L, beta)}"
        )
    a = (_fr(1) - _fr(beta)) / (6 * _fr(L))
    if kappa_is_zero:
        # largest k with k^2 N^3 <= a^2 T
        q = a**2 * T / N**3
        k = isqrt(int(q))
    else:
        # largest k with k^4 N^3 <= a^4 T
        q = a**4 * T / N**3
        k = isqrt(isqrt(int(q)))
    if k < 1:
        raise ThresholdViolation(
            f"interval formula floors below 1 at N = {N}, T = {T} "
            f"(raise T or lower beta/L)"
        )
    return k


_ORDERS = {
    "every_step": "O(T)",
    "decentralized": "O(T)",
    "kappa_zero": "O(N^(3/2) T^(1/2))",
    "kappa_nonzero": "O(N^(3/4) T^(3/4))",
}


def comm_rounds(
    N: int, T: int, regime: str, L: Optional[float] = None, beta: Optional[float] = None
) -> CommRounds:
    """Communication rounds over T iterations: symbolic order plus the concrete count.

    The kappa regimes count floor((T-1)/I) rounds at the largest admissible
    interval and therefore need L and beta; the every-step and decentralized
    regimes mix at each of the T-1 iterations.
    """
    if regime not in _ORDERS:
        raise ValueError(f"unknown regime {regime!r}")
    if regime in ("every_step", "decentralized"):
        return CommRounds(order=_ORDERS[regime], count=T - 1)
    if L is None or beta is None:
        raise ValueError(f"regime {regime!r} needs L and beta")
    interval = max_interval(N, T, L, beta, kappa_is_zero=(regime == "kappa_zero"))
    return CommRounds(order=_ORDERS[regime], count=(T - 1) // interval)
