"""Single-worker momentum update rules and the synchronization restart step.

Two production rules (both matching the buffer form used by common deep
learning frameworks):

    heavy-ball  (Polyak):    u' = beta u + g;  x' = x - gamma u'
    look-ahead  (Nesterov):  u' = beta u + g;  v' = beta u' + g;  x' = x - gamma v'

Each has an algebraically equivalent alternative formulation kept here purely
as a cross-check oracle:

    single-variable heavy-ball:  x' = x - gamma g + beta (x - x_prev)
    two-sequence look-ahead:     y' = x - gamma g;  x' = y' + beta (y' - y_prev)

The restart step resets every worker's solution and momentum buffer to the
node averages; the cleared variant zeroes the buffers instead (the common
model-averaging heuristic used as a baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import fixed_order_mean

__all__ = [
    "HyperParams",
    "WorkerState",
    "polyak_step",
    "polyak_step_single_variable",
    "nesterov_step",
    "nesterov_step_two_sequence",
    "restart_average",
    "restart_average_cleared",
]


@dataclass(frozen=True)
class HyperParams:
    """Learning rate, momentum coefficient, synchronization interval, horizon."""

    gamma: float
    beta: float
    interval: int = 1
    horizon: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class WorkerState:
    """One worker's solution x, momentum buffer u, and Nesterov scratch v.

    x_prev and y_prev exist only for the oracle formulations; the production
    rules never read them and the restart step re-seeds x_prev to the new
    common solution.
    """

    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    x_prev: np.ndarray
    y_prev: np.ndarray

    @classmethod
    def initial(cls, x0) -> "WorkerState":
        x0 = np.asarray(x0, dtype=np.float64)
        zero = np.zeros_like(x0)
        return cls(x=x0.copy(), u=zero, v=zero, x_prev=x0.copy(), y_prev=zero)


def _check_dims(state: WorkerState, g: np.ndarray):
    if g.shape != state.x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.x.shape}")


def polyak_step(state: WorkerState, g: np.ndarray, hp: HyperParams) -> WorkerState:
    """Heavy-ball update: u' = beta u + g, x' = x - gamma u'."""
    _check_dims(state, g)
    u_new = hp.beta * state.u + g
    x_new = state.x - hp.gamma * u_new
    return replace(state, x=x_new, u=u_new, x_prev=state.x)


def polyak_step_single_variable(x, x_prev, g, hp: HyperParams) -> np.ndarray:
    """Oracle form x' = x - gamma g + beta (x - x_prev); start with x_prev = x."""
    x = np.asarray(x, dtype=np.float64)
    if np.shape(x_prev) != x.shape or np.shape(g) != x.shape:
        raise ValueError("dimension mismatch")
    return x - hp.gamma * g + hp.beta * (x - x_prev)


def nesterov_step(state: WorkerState, g: np.ndarray, hp: HyperParams) -> WorkerState:
    """Look-ahead update: u' = beta u + g, v' = beta u' + g, x' = x - gamma v'."""
    _check_dims(state, g)
    u_new = hp.beta * state.u + g
    v_new = hp.beta * u_new + g
    x_new = state.x - hp.gamma * v_new
    return replace(state, x=x_new, u=u_new, v=v_new, x_prev=state.x)


def nesterov_step_two_sequence(y_prev, x, g, hp: HyperParams):
    """Oracle form y' = x - gamma g, x' = y' + beta (y' - y_prev).

    Matches the buffer form only from a zero initial solution (with the
    conventional y_prev = 0 seed); returns (y', x').
    """
    x = np.asarray(x, dtype=np.float64)
    if np.shape(y_prev) != x.shape or np.shape(g) != x.shape:
        raise ValueError("dimension mismatch")
    y_new = x - hp.gamma * g
    return y_new, y_new + hp.beta * (y_new - y_prev)


def restart_average(states) -> list:
    """Reset every worker's u and x to the node averages (momentum kept).

    The Nesterov scratch v is never averaged; it is recomputed from u and g
    on the next step.  Oracle history x_prev is re-seeded to the new common
    solution (the equivalence oracles are only valid between restarts).
    """
    if len(states) == 0:
        raise ValueError("no worker states to average")
    u_hat = fixed_order_mean([s.u for s in states])
    x_hat = fixed_order_mean([s.x for s in states])
    return [replace(s, x=x_hat, u=u_hat, x_prev=x_hat) for s in states]


def restart_average_cleared(states) -> list:
    """Model averaging with cleared momentum: x to the node average, u to zero."""
    if len(states) == 0:
        raise ValueError("no worker states to average")
    x_hat = fixed_order_mean([s.x for s in states])
    zero = np.zeros_like(x_hat)
    return [replace(s, x=x_hat, u=zero, x_prev=x_hat) for s in states]
