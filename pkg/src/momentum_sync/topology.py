"""Symmetric doubly stochastic mixing matrices and their spectral certificates.

A valid mixing matrix W must be symmetric, doubly stochastic, have top
eigenvalue 1, and satisfy max(|lambda_2|, |lambda_N|) <= sqrt(rho) < 1.  rho
is stored squared so that sqrt(rho) is literally the eigenvalue bound the
step-size gates consume.  Custom matrices are only accepted through
validate_assumption2; an invalid W would silently break the decentralized
step-size gate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import symmetric_eigenvalues

__all__ = [
    "MixingMatrix",
    "TopologyError",
    "complete_graph",
    "ring_graph",
    "validate_assumption2",
    "projector_mix_norm",
    "mixing_to_json",
    "mixing_from_json",
]

_ENTRY_TOL = 1e-12
_ROWSUM_TOL = 1e-12
_TOP_EIG_TOL = 1e-10
_RHO_SLACK = 1e-9


class TopologyError(ValueError):
    """A mixing-matrix invariant is violated; the message names the condition."""


@dataclass(frozen=True)
class MixingMatrix:
    """Validated N x N mixing matrix with spectral-gap certificate rho in [0, 1)."""

    W: np.ndarray
    rho: float
    N: int

    def __post_init__(self):
        self.W.setflags(write=False)


def complete_graph(N: int) -> MixingMatrix:
    """All entries 1/N: every step computes exact global averages (rho = 0)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return MixingMatrix(W=np.full((N, N), 1.0 / N), rho=0.0, N=N)


def ring_graph(N: int, self_weight: float) -> MixingMatrix:
    """Ring with the given self weight; neighbors split the remainder equally.

    The spectrum of this circulant is self_weight + (1 - self_weight) cos(2 pi k / N),
    which gives the certificate in closed form.
    """
    if N < 3:
        raise ValueError("ring needs N >= 3")
    if not 0.0 < self_weight < 1.0:
        raise ValueError("self_weight must lie in (0, 1)")
    w = np.zeros((N, N))
    side = (1.0 - self_weight) / 2.0
    for i in range(N):
        w[i, i] = self_weight
        w[i, (i - 1) % N] += side
        w[i, (i + 1) % N] += side
    eigs = self_weight + (1.0 - self_weight) * np.cos(2.0 * np.pi * np.arange(N) / N)
    sqrt_rho = float(np.max(np.abs(eigs[1:])))
    if sqrt_rho >= 1.0:
        raise TopologyError(f"ring spectral bound {sqrt_rho} is not < 1")
    mix = MixingMatrix(W=w, rho=sqrt_rho**2, N=N)
    validate_assumption2(w)
    return mix


def validate_assumption2(W: np.ndarray) -> float:
    """Check all mixing-matrix invariants; return the certified rho.

    Raises TopologyError naming the first violated condition.  The returned
    rho carries a small additive slack so downstream spectral inequalities
    hold robustly under floating point.
    """
    w = np.asarray(W, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TopologyError(f"not a square matrix: shape {w.shape}")
    n = w.shape[0]
    if not np.all(np.isfinite(w)):
        raise TopologyError("matrix has non-finite entries")
    skew = float(np.max(np.abs(w - w.T))) if n else 0.0
    if skew > _ENTRY_TOL:
        raise TopologyError(f"not symmetric: max |W - W^T| = {skew:.3e}")
    if np.any(w < -_ENTRY_TOL) or np.any(w > 1.0 + _ENTRY_TOL):
        raise TopologyError("not stochastic: entries must lie in [0, 1]")
    row_err = float(np.max(np.abs(w.sum(axis=1) - 1.0)))
    if row_err > _ROWSUM_TOL:
        raise TopologyError(f"rows do not sum to 1: max error {row_err:.3e}")
    eigs = symmetric_eigenvalues(w)
    if abs(eigs[0] - 1.0) > _TOP_EIG_TOL:
        raise TopologyError(f"top eigenvalue is {eigs[0]!r}, expected 1")
    if n == 1:
        return 0.0
    sqrt_rho = float(max(abs(eigs[1]), abs(eigs[-1])))
    if sqrt_rho >= 1.0 - 1e-12:
        raise TopologyError(
            f"second spectral bound max(|lambda_2|, |lambda_N|) = {sqrt_rho} is not < 1"
            " (disconnected or non-mixing topology)"
        )
    return min(sqrt_rho**2 + _RHO_SLACK, 1.0)


def projector_mix_norm(mix: MixingMatrix, k: int) -> float:
    """Spectral norm of (I - Q) W^k with Q = (1/N) 1 1^T.

    Diagonalization bounds this by rho^(k/2); the exact value is computed to
    let the test suite verify that inequality on every constructed topology.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    n = mix.N
    q = np.full((n, n), 1.0 / n)
    m = (np.eye(n) - q) @ np.linalg.matrix_power(mix.W, k)
    return float(np.linalg.norm(m, 2))


def mixing_to_json(mix: MixingMatrix) -> str:
    return json.dumps({"n": mix.N, "rows": mix.W.tolist()}, indent=2)


def mixing_from_json(text: str) -> MixingMatrix:
    """Load {"n": N, "rows": [[...]]}; validation is always re-run."""
    doc = json.loads(text)
    unknown = set(doc) - {"n", "rows"}
    if unknown:
        raise TopologyError(f"unknown mixing-matrix fields: {sorted(unknown)}")
    w = np.asarray(doc["rows"], dtype=np.float64)
    n = int(doc["n"])
    if w.shape != (n, n):
        raise TopologyError(f"rows have shape {w.shape}, expected ({n}, {n})")
    rho = validate_assumption2(w)
    return MixingMatrix(W=w, rho=rho, N=n)
