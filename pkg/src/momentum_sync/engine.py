"""Iteration engine for distributed momentum SGD.

Two orchestrations over a shared inner loop:

* parallel restarted: workers step locally and, every `interval` iterations,
  reset solution and momentum buffer to the global node averages (or zero the
  buffers, for the cleared-momentum baseline);
* decentralized: workers step locally every iteration and then replace
  (u, x) by neighborhood weighted averages under a mixing matrix.

The loop runs t = 1 .. T-1, so a horizon T performs T-1 updates and the
reported average gradient norm runs over the T evaluation points t = 0..T-1.
With lemma checking enabled the engine verifies, at every iteration, that the
node averages follow the single-node momentum recursion driven by the
averaged stochastic gradient, and that the auxiliary sequence built from
consecutive solution averages moves by exactly -gamma/(1-beta) times that
gradient.  Both identities are algebraic, so they must hold per realization
to floating-point accuracy.

All randomness derives from per-worker counter streams seeded by the run
seed; reductions are order-fixed.  Identical configs therefore produce
bit-identical traces no matter how the caller schedules execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .momentum_rules import HyperParams, WorkerState
from .numerics import RngStream, WorkerStreams, fixed_order_mean, fixed_order_mix
from .problems import (
    ALL_WORKERS,
    ProblemSpec,
    mean_gradient,
    objective_value,
    worker_gradients,
)
from .theory import (
    ThresholdViolation,
    gate_nesterov,
    gate_polyak,
    max_interval,
    min_horizon_every_step,
)
from .topology import MixingMatrix

__all__ = [
    "PARALLEL_RESTARTED",
    "DECENTRALIZED",
    "POLYAK",
    "NESTEROV",
    "CLEARED_MOMENTUM",
    "RunConfig",
    "Trace",
    "RunResult",
    "DivergenceError",
    "LemmaResidualError",
    "run_parallel_restarted",
    "run_decentralized",
    "run",
    "sweep_speedup",
    "SpeedupResult",
    "replicated_problem",
    "trace_to_csv",
    "result_to_dict",
    "TRACE_FORMAT_VERSION",
    "RESULT_FORMAT_VERSION",
]

PARALLEL_RESTARTED = "parallel_restarted"
DECENTRALIZED = "decentralized"
POLYAK = "polyak"
NESTEROV = "nesterov"
CLEARED_MOMENTUM = "cleared_momentum"

TRACE_FORMAT_VERSION = 1
RESULT_FORMAT_VERSION = 1
TRACE_CSV_HEADER = "t,grad_norm_sq,objective,consensus_x,consensus_u,comm_rounds"

_DIVERGENCE_LIMIT = 1e12
_LEMMA_HARD_TOL = 1e-9

# Reserved stream id for the random output-iterate draw.
_OUTPUT_DRAW_STREAM = 1 << 41


class DivergenceError(RuntimeError):
    """A worker state left the finite range; carries the iteration index."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"diverged at iteration {iteration}: {message}")
        self.iteration = iteration


class LemmaResidualError(RuntimeError):
    """A runtime identity check exceeded the hard tolerance."""

    def __init__(self, iteration: int, name: str, residual: float):
        super().__init__(
            f"identity '{name}' residual {residual:.3e} exceeds "
            f"{_LEMMA_HARD_TOL:.0e} at iteration {iteration}"
        )
        self.iteration = iteration


@dataclass
class RunConfig:
    algorithm: str
    option: str
    hp: HyperParams
    problem: ProblemSpec
    x_init: np.ndarray
    seed: int = 0
    topology: Optional[MixingMatrix] = None
    eval_every: int = 1
    check_lemmas: bool = False
    keep_xbar_history: bool = False

    def __post_init__(self):
        if self.algorithm not in (PARALLEL_RESTARTED, DECENTRALIZED):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.option not in (POLYAK, NESTEROV, CLEARED_MOMENTUM):
            raise ValueError(f"unknown option {self.option!r}")
        if self.algorithm == DECENTRALIZED:
            if self.topology is None:
                raise ValueError("decentralized runs need a validated topology")
            if self.topology.N != self.problem.num_workers:
                raise ValueError(
                    f"topology has {self.topology.N} nodes but the problem has "
                    f"{self.problem.num_workers} workers"
                )
            if self.option == CLEARED_MOMENTUM:
                raise ValueError("the cleared-momentum baseline is parallel-restarted only")
        self.x_init = np.asarray(self.x_init, dtype=np.float64)
        if self.x_init.shape != (self.problem.dimension,):
            raise ValueError("x_init dimension does not match the problem")
        if not np.all(np.isfinite(self.x_init)):
            raise ValueError("x_init must be finite")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class Trace:
    """Time-indexed metric ledger, one row per recorded evaluation step."""

    t: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    consensus_x: list = field(default_factory=list)
    consensus_u: list = field(default_factory=list)
    comm_rounds: list = field(default_factory=list)
    lemma_residual: list = field(default_factory=list)

    def add(self, t, gns, obj, cx, cu, comm, lemma):
        self.t.append(t)
        self.grad_norm_sq.append(gns)
        self.objective.append(obj)
        self.consensus_x.append(cx)
        self.consensus_u.append(cu)
        self.comm_rounds.append(comm)
        self.lemma_residual.append(lemma)


@dataclass
class RunResult:
    trace: Trace
    avg_grad_norm_sq: float
    random_iterate: np.ndarray
    random_iterate_t: int
    final_states: list
    comm_rounds_total: int
    lemma_report: Optional[dict]
    xbar_history: Optional[np.ndarray] = None


class _IdentityChecker:
    """Tracks the node-average recursion and auxiliary-sequence increments.

    Keeps a two-step window of aggregates only (O(m) memory).  The cleared
    baseline zeroes buffers at sync, which breaks the buffer recursion and
    the auxiliary increment by design; those checks are adjusted or skipped
    there.
    """

    def __init__(self, option: str, hp: HyperParams, xbar0: np.ndarray):
        self.option = option
        self.hp = hp
        self.prev_xbar = xbar0
        self.prev_ubar = np.zeros_like(xbar0)
        self.aux_prev = xbar0
        self.max_residuals = {"node_average_u": 0.0, "node_average_x": 0.0, "aux_increment": 0.0}
        self.argmax_iteration = 0

    def observe(self, t, xbar, ubar, gbar, cleared_sync: bool):
        beta, gamma = self.hp.beta, self.hp.gamma
        expected_u = beta * self.prev_ubar + gbar
        if self.option == NESTEROV:
            expected_x = self.prev_xbar - gamma * (beta * expected_u + gbar)
        else:
            expected_x = self.prev_xbar - gamma * expected_u
        if cleared_sync:
            # clearing moves the buffer average to zero but leaves x untouched
            resid_u = float(np.max(np.abs(ubar)))
        else:
            resid_u = float(np.max(np.abs(ubar - expected_u)))
        resid_x = float(np.max(np.abs(xbar - expected_x)))
        self._record(t, "node_average_u", resid_u)
        self._record(t, "node_average_x", resid_x)
        if self.option != CLEARED_MOMENTUM:
            scale = gamma / (1.0 - beta)
            if self.option == NESTEROV:
                aux = (xbar - beta * self.prev_xbar) / (1.0 - beta) + scale * beta * gbar
            else:
                aux = (xbar - beta * self.prev_xbar) / (1.0 - beta)
            resid_aux = float(np.max(np.abs(aux - self.aux_prev + scale * gbar)))
            self._record(t, "aux_increment", resid_aux)
            self.aux_prev = aux
        self.prev_xbar = xbar
        self.prev_ubar = ubar

    def _record(self, t, name, residual):
        if residual > self.max_residuals[name]:
            self.max_residuals[name] = residual
            self.argmax_iteration = t
        if residual > _LEMMA_HARD_TOL:
            raise LemmaResidualError(t, name, residual)

    def report(self) -> dict:
        out = dict(self.max_residuals)
        out["max_residual"] = max(self.max_residuals.values())
        out["argmax_iteration"] = self.argmax_iteration
        return out


def _mean_rows(rows: np.ndarray) -> np.ndarray:
    # same accumulation as fixed_order_mean, minus per-row validation
    first = rows[0]
    acc = np.zeros_like(first)
    for i in range(1, rows.shape[0]):
        acc += rows[i] - first
    return first + acc / rows.shape[0]


def _check_finite(x_rows: np.ndarray, t: int):
    peak = float(np.max(np.abs(x_rows)))
    if not math.isfinite(peak) or peak > _DIVERGENCE_LIMIT:
        raise DivergenceError(t, f"|x| reached {peak!r}")


def run(cfg: RunConfig) -> RunResult:
    """Execute either algorithm for hp.horizon - 1 update iterations.

    Worker states are held as (N, m) row matrices.  Every row operation is
    elementwise and every cross-worker reduction is order-fixed, so each row
    evolves bit-identically to a worker stepping on its own through the
    momentum_rules functions with its own stream.
    """
    spec = cfg.problem
    hp = cfg.hp
    n, m, t_end = spec.num_workers, spec.dimension, hp.horizon
    nesterov = cfg.option == NESTEROV
    cleared = cfg.option == CLEARED_MOMENTUM
    decentralized = cfg.algorithm == DECENTRALIZED

    x_rows = np.tile(cfg.x_init, (n, 1))
    u_rows = np.zeros((n, m))
    v_rows = np.zeros((n, m))
    xprev_rows = x_rows
    streams = WorkerStreams(cfg.seed, n)
    output_t = RngStream(cfg.seed, _OUTPUT_DRAW_STREAM).integer_below(t_end)

    xbar = _mean_rows(x_rows)
    checker = _IdentityChecker(cfg.option, hp, xbar) if cfg.check_lemmas else None

    trace = Trace()
    g_exact = mean_gradient(spec, ALL_WORKERS, xbar)
    gns = float(g_exact @ g_exact)
    total_gns = gns
    comm = 0
    trace.add(0, gns, objective_value(spec, xbar), 0.0, 0.0, comm, 0.0)
    random_iterate = xbar.copy() if output_t == 0 else None
    xbar_history = [xbar.copy()] if cfg.keep_xbar_history else None

    sigma = spec.noise_sigma
    for t in range(1, t_end):
        grads = worker_gradients(spec, x_rows) + streams.normal_rows(m, sigma)
        xprev_rows = x_rows
        u_rows = hp.beta * u_rows + grads
        if nesterov:
            v_rows = hp.beta * u_rows + grads
            x_rows = x_rows - hp.gamma * v_rows
        else:
            x_rows = x_rows - hp.gamma * u_rows
        synced = False
        xbar = ubar = None
        if decentralized:
            x_rows = fixed_order_mix(x_rows, cfg.topology.W)
            u_rows = fixed_order_mix(u_rows, cfg.topology.W)
            comm += 1
        elif t % hp.interval == 0:
            xbar = _mean_rows(x_rows)
            ubar = np.zeros(m) if cleared else _mean_rows(u_rows)
            x_rows = np.tile(xbar, (n, 1))
            u_rows = np.zeros((n, m)) if cleared else np.tile(ubar, (n, 1))
            xprev_rows = x_rows
            synced = True
            comm += 1
        _check_finite(x_rows, t)

        if xbar is None:
            xbar = _mean_rows(x_rows)
        record = (t % cfg.eval_every == 0) or t == t_end - 1
        if ubar is None and (checker is not None or record):
            ubar = _mean_rows(u_rows)
        if checker is not None:
            gbar = _mean_rows(grads)
            checker.observe(t, xbar, ubar, gbar, cleared_sync=(synced and cleared))

        g_exact = mean_gradient(spec, ALL_WORKERS, xbar)
        gns = float(g_exact @ g_exact)
        total_gns += gns
        if record:
            trace.add(
                t,
                gns,
                objective_value(spec, xbar),
                float(np.sum((x_rows - xbar[None, :]) ** 2) / n),
                float(np.sum((u_rows - ubar[None, :]) ** 2) / n),
                comm,
                checker.report()["max_residual"] if checker is not None else 0.0,
            )
        if t == output_t:
            random_iterate = xbar.copy()
        if xbar_history is not None:
            xbar_history.append(xbar.copy())

    final_states = [
        WorkerState(
            x=x_rows[i].copy(),
            u=u_rows[i].copy(),
            v=v_rows[i].copy(),
            x_prev=xprev_rows[i].copy(),
            y_prev=np.zeros(m),
        )
        for i in range(n)
    ]
    return RunResult(
        trace=trace,
        avg_grad_norm_sq=total_gns / t_end,
        random_iterate=random_iterate,
        random_iterate_t=output_t,
        final_states=final_states,
        comm_rounds_total=comm,
        lemma_report=checker.report() if checker is not None else None,
        xbar_history=np.stack(xbar_history) if xbar_history is not None else None,
    )


def run_parallel_restarted(cfg: RunConfig) -> RunResult:
    if cfg.algorithm != PARALLEL_RESTARTED:
        raise ValueError("config is not a parallel-restarted run")
    return run(cfg)


def run_decentralized(cfg: RunConfig) -> RunResult:
    if cfg.algorithm != DECENTRALIZED:
        raise ValueError("config is not a decentralized run")
    return run(cfg)


@dataclass
class SpeedupResult:
    rows: list
    mean_by_workers: dict
    interval_by_workers: dict
    exponent: Optional[float]
    exponent_stderr: Optional[float]


def replicated_problem(spec: ProblemSpec, n: int) -> ProblemSpec:
    if spec.certified_kappa != 0.0:
        raise ValueError(
            "the default sweep builder replicates a homogeneous (kappa = 0) problem; "
            "pass problem_builder for heterogeneous sweeps"
        )
    centers = np.tile(spec.centers[0], (n, 1))
    return replace(spec, num_workers=n, centers=centers)


def sweep_speedup(
    base_cfg: RunConfig,
    worker_counts: list,
    T: int,
    seed_count: int = 20,
    use_max_interval: bool = False,
    problem_builder: Optional[Callable[[int], ProblemSpec]] = None,
) -> SpeedupResult:
    """Run the linear-speedup protocol gamma = sqrt(N/T) over the worker counts.

    With use_max_interval the synchronization interval is the largest value
    the reduced-communication corollary admits (computed per N); otherwise
    I = 1.  All horizon thresholds are verified for every N before anything
    runs.  Each (N, seed) pair is an independent deterministic run, so rows
    may be computed in any order or in parallel.
    """
    if base_cfg.algorithm != PARALLEL_RESTARTED:
        raise ValueError("speedup sweeps drive the parallel-restarted algorithm")
    spec = base_cfg.problem
    beta = base_cfg.hp.beta
    L = spec.certified_L
    kappa_zero = spec.certified_kappa == 0.0
    builder = problem_builder or (lambda n: replicated_problem(spec, n))

    violations = []
    intervals = {}
    for n in worker_counts:
        if use_max_interval:
            try:
                intervals[n] = max_interval(n, T, L, beta, kappa_is_zero=kappa_zero)
            except ThresholdViolation as exc:
                violations.append(f"N={n}: {exc}")
        else:
            intervals[n] = 1
            thr = min_horizon_every_step(n, L, beta)
            if T < thr:
                violations.append(f"N={n}: T = {T} is below the every-step threshold {thr}")
        gamma = math.sqrt(n) / math.sqrt(T)
        hp_n = HyperParams(gamma=gamma, beta=beta, interval=intervals.get(n, 1), horizon=T)
        gate = gate_nesterov(hp_n, L) if base_cfg.option == NESTEROV else gate_polyak(hp_n, L)
        if not gate.ok:
            violations.append(f"N={n}: " + "; ".join(gate.violations))
    if violations:
        raise ThresholdViolation("; ".join(violations))

    rows = []
    per_seed_values = {}
    for n in worker_counts:
        gamma = math.sqrt(n) / math.sqrt(T)
        hp = HyperParams(gamma=gamma, beta=beta, interval=intervals[n], horizon=T)
        problem = builder(n)
        for k in range(seed_count):
            seed = base_cfg.seed + k
            cfg = RunConfig(
                algorithm=PARALLEL_RESTARTED,
                option=base_cfg.option,
                hp=hp,
                problem=problem,
                x_init=base_cfg.x_init,
                seed=seed,
                eval_every=max(1, T // 16),
            )
            result = run(cfg)
            rows.append(
                {
                    "workers": n,
                    "interval": intervals[n],
                    "seed": seed,
                    "avg_grad_norm_sq": result.avg_grad_norm_sq,
                    "comm_rounds": result.comm_rounds_total,
                }
            )
            per_seed_values.setdefault(k, {})[n] = result.avg_grad_norm_sq

    mean_by_workers = {
        n: float(np.mean([r["avg_grad_norm_sq"] for r in rows if r["workers"] == n]))
        for n in worker_counts
    }
    exponent = stderr = None
    if len(worker_counts) >= 2:
        log_n = np.log(np.asarray(worker_counts, dtype=np.float64))
        slopes = []
        for k in range(seed_count):
            log_v = np.log([per_seed_values[k][n] for n in worker_counts])
            slopes.append(float(np.polyfit(log_n, log_v, 1)[0]))
        exponent = float(np.mean(slopes))
        if len(slopes) >= 2:
            stderr = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes)))
    return SpeedupResult(
        rows=rows,
        mean_by_workers=mean_by_workers,
        interval_by_workers=intervals,
        exponent=exponent,
        exponent_stderr=stderr,
    )


def trace_to_csv(trace: Trace) -> str:
    """Fixed-header CSV; floats are written in shortest round-trip form."""
    lines = [TRACE_CSV_HEADER]
    for i in range(len(trace.t)):
        lines.append(
            f"{trace.t[i]},{trace.grad_norm_sq[i]!r},{trace.objective[i]!r},"
            f"{trace.consensus_x[i]!r},{trace.consensus_u[i]!r},{trace.comm_rounds[i]}"
        )
    return "\n".join(lines) + "\n"


def result_to_dict(result: RunResult) -> dict:
    """JSON-ready view of a run result (trace exported separately as CSV)."""
    return {
        "format_version": RESULT_FORMAT_VERSION,
        "avg_grad_norm_sq": result.avg_grad_norm_sq,
        "random_iterate": result.random_iterate.tolist(),
        "random_iterate_t": result.random_iterate_t,
        "comm_rounds_total": result.comm_rounds_total,
        "lemma_report": result.lemma_report,
        "final_x": [s.x.tolist() for s in result.final_states],
        "final_u": [s.u.tolist() for s in result.final_states],
    }
