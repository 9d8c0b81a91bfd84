"""Synthetic stochastic objectives with certified constants.

Two families are provided, both finite-worker consensus objectives
f(x) = (1/N) sum_i f_i(x) with exact analytic gradients:

* quadratic: f_i(x) = 0.5 (x - c_i)^T A (x - c_i).  Smoothness, heterogeneity
  and the minimum value all have closed forms, so the certificates are exact.
* rational nonconvex: f_i(x) = (1/m) sum_j phi(x_j - c_ij) with
  phi(u) = u^2 / (1 + u^2).  Here the heterogeneity bound and the minimum are
  certified by brute-force oracles with explicit slack.

Stochastic gradients add isotropic Gaussian noise with E||noise||^2 exactly
equal to sigma^2, which turns the usual variance *bound* into an equality the
test suite can check tightly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import RngStream, fixed_order_mean, gaussian_vector

__all__ = [
    "ProblemSpec",
    "GradSample",
    "ALL_WORKERS",
    "make_quadratic",
    "make_quadratic_from_centers",
    "make_rational_nonconvex",
    "sample_gradient",
    "worker_gradients",
    "mean_gradient",
    "objective_value",
    "deviation_norm",
    "problem_to_json",
    "problem_from_json",
]

QUADRATIC = "quadratic"
RATIONAL = "rational_nonconvex"

# Sentinel accepted by mean_gradient in place of a worker id.
ALL_WORKERS = None

# Reserved stream id for problem construction; run-time workers use 0..N-1.
_CONSTRUCTION_STREAM = 1 << 40

_F_STAR_SLACK = 1e-9
_KAPPA_INFLATION = 1.1
_BOX_INFLATION = 3.0
_MIN_BOX_HALFWIDTH = 1.0
_GRID_POINTS = 4097
_DESCENT_STARTS = 64
_DESCENT_ITERS = 3000


@dataclass(frozen=True)
class ProblemSpec:
    """A finite-worker stochastic objective with certified constants.

    certified_L bounds the smoothness modulus of every f_i, certified_kappa
    bounds the worker heterogeneity sqrt((1/N) sum_i ||grad f_i - grad f||^2),
    and f_star lower-bounds f.  mean_center is the average of the worker
    centers (the exact minimizer for the quadratic family).
    """

    kind: str
    dimension: int
    num_workers: int
    centers: np.ndarray
    curvature: Optional[np.ndarray]
    noise_sigma: float
    certified_L: float
    certified_kappa: float
    f_star: float
    mean_center: np.ndarray
    sampling_box: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.kind not in (QUADRATIC, RATIONAL):
            raise ValueError(f"unknown problem kind: {self.kind!r}")
        if self.centers.shape != (self.num_workers, self.dimension):
            raise ValueError("centers must have shape (num_workers, dimension)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        for name in ("centers", "curvature", "mean_center", "sampling_box"):
            arr = getattr(self, name)
            if arr is not None:
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name} contains non-finite entries")
                arr.setflags(write=False)
        diag = None
        if self.curvature is not None:
            d = np.diag(self.curvature).copy()
            if np.array_equal(self.curvature, np.diag(d)):
                diag = d
        object.__setattr__(self, "_curvature_diag", diag)


@dataclass(frozen=True)
class GradSample:
    """One stochastic gradient draw g with E[g | x] = grad f_i(x)."""

    g: np.ndarray
    worker_id: int
    iteration: int


def _standard_normals(stream: RngStream, rows: int, m: int) -> np.ndarray:
    # normal_block scales entries to N(0, scale^2/m); scale=sqrt(m) gives N(0,1)
    return stream.normal_block(rows, m, float(np.sqrt(m)))


def _draw_centers_in_ball(stream: RngStream, n: int, m: int, radius: float) -> np.ndarray:
    if radius == 0.0:
        stream.raw_words(0)
        return np.zeros((n, m))
    directions = _standard_normals(stream, n, m)
    norms = np.sqrt(np.sum(directions**2, axis=1))
    norms[norms == 0.0] = 1.0
    radii = radius * stream.uniforms(n) ** (1.0 / m)
    return directions * (radii / norms)[:, None]


def make_quadratic(
    m: int,
    num_workers: int,
    center_spread: float,
    curvature_spectrum,
    sigma: float,
    seed: int,
) -> ProblemSpec:
    """Quadratic family with centers drawn uniformly in a ball, then recentered.

    After recentering the center average is exactly zero, so the minimizer and
    minimum value come out in closed form.
    """
    spectrum = np.asarray(curvature_spectrum, dtype=np.float64)
    if spectrum.shape != (m,):
        raise ValueError(f"curvature_spectrum must have length {m}")
    if np.any(spectrum < 0):
        raise ValueError("curvature_spectrum entries must be nonnegative")
    stream = RngStream(seed, _CONSTRUCTION_STREAM)
    centers = _draw_centers_in_ball(stream, num_workers, m, center_spread)
    centers = centers - fixed_order_mean(list(centers))[None, :]
    return _quadratic_spec(centers, np.diag(spectrum), sigma, mean_center=np.zeros(m))


def make_quadratic_from_centers(centers, curvature_spectrum, sigma: float) -> ProblemSpec:
    """Quadratic family at explicitly given centers (no recentering)."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2:
        raise ValueError("centers must be a (num_workers, dimension) array")
    spectrum = np.asarray(curvature_spectrum, dtype=np.float64)
    if spectrum.shape != (centers.shape[1],):
        raise ValueError("curvature_spectrum length must match the dimension")
    mean_center = fixed_order_mean(list(centers))
    return _quadratic_spec(centers, np.diag(spectrum), sigma, mean_center=mean_center)


def _quadratic_spec(centers, curvature, sigma, mean_center) -> ProblemSpec:
    n, m = centers.shape
    deviations = (mean_center[None, :] - centers) @ curvature
    kappa_sq = float(np.sum(deviations**2) / n)
    f_star = 0.0
    for i in range(n):
        d = mean_center - centers[i]
        f_star += 0.5 * float(d @ (curvature @ d))
    f_star /= n
    return ProblemSpec(
        kind=QUADRATIC,
        dimension=m,
        num_workers=n,
        centers=centers.copy(),
        curvature=curvature.copy(),
        noise_sigma=float(sigma),
        certified_L=float(np.max(np.diag(curvature))) if m else 0.0,
        certified_kappa=float(np.sqrt(kappa_sq)),
        f_star=f_star,
        mean_center=np.asarray(mean_center, dtype=np.float64).copy(),
    )


def make_rational_nonconvex(
    m: int, num_workers: int, center_spread: float, sigma: float, seed: int
) -> ProblemSpec:
    """Nonconvex family; kappa and f_star are certified by brute-force oracles.

    |phi''| <= 2 everywhere and the coordinates decouple with weight 1/m, so
    2 is stored as the smoothness certificate.  The heterogeneity bound comes
    from per-coordinate grid maximization over the sampling box (inflated by
    10%), the minimum from multi-start exact gradient descent (minus 1e-9).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    stream = RngStream(seed, _CONSTRUCTION_STREAM)
    centers = _draw_centers_in_ball(stream, num_workers, m, center_spread)
    box = _sampling_box(centers)
    kappa = _kappa_grid_certificate(centers, box)
    f_star = _f_star_descent_certificate(centers, box, stream)
    return ProblemSpec(
        kind=RATIONAL,
        dimension=m,
        num_workers=num_workers,
        centers=centers,
        curvature=None,
        noise_sigma=float(sigma),
        certified_L=2.0,
        certified_kappa=kappa,
        f_star=f_star,
        mean_center=fixed_order_mean(list(centers)),
        sampling_box=box,
    )


def _sampling_box(centers: np.ndarray) -> np.ndarray:
    """Bounding box of the centers, inflated by a factor of 3 around its midpoint."""
    lo = centers.min(axis=0)
    hi = centers.max(axis=0)
    mid = 0.5 * (lo + hi)
    half = np.maximum(_BOX_INFLATION * 0.5 * (hi - lo), _MIN_BOX_HALFWIDTH)
    return np.stack([mid - half, mid + half])


def _phi(u):
    u2 = u * u
    return u2 / (1.0 + u2)


def _phi_prime(u):
    d = 1.0 + u * u
    return 2.0 * u / (d * d)


def _kappa_grid_certificate(centers: np.ndarray, box: np.ndarray) -> float:
    """Max of (1/N) sum_i ||grad f_i - grad f||^2 over the box, plus 10%.

    The deviation splits as a sum of per-coordinate terms, each depending on a
    single coordinate, so a dense 1-D grid per coordinate maximizes exactly
    (up to grid resolution, covered by the inflation).
    """
    n, m = centers.shape
    total = 0.0
    for j in range(m):
        grid = np.linspace(box[0, j], box[1, j], _GRID_POINTS)
        per_worker = _phi_prime(grid[None, :] - centers[:, j][:, None]) / m
        dev = per_worker - per_worker.mean(axis=0, keepdims=True)
        total += float(np.max(np.mean(dev**2, axis=0)))
    return _KAPPA_INFLATION * float(np.sqrt(total))


def _rational_mean_gradient_rows(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    n, m = centers.shape
    acc = np.zeros_like(points)
    for i in range(n):
        acc += _phi_prime(points - centers[i][None, :])
    return acc / (m * n)


def _f_star_descent_certificate(
    centers: np.ndarray, box: np.ndarray, stream: RngStream
) -> float:
    """Multi-start exact gradient descent, assembled per coordinate.

    f separates as sum_j h_j(x_j), so after descending >= 64 full-vector
    starts the certified minimum is the sum over coordinates of the best
    value reached in that coordinate, minus a small slack.
    """
    n, m = centers.shape
    n_random = max(_DESCENT_STARTS, n + 2) - (n + 2)
    uniforms = stream.uniforms(n_random * m).reshape(n_random, m)
    random_starts = box[0][None, :] + uniforms * (box[1] - box[0])[None, :]
    starts = np.vstack([centers, fixed_order_mean(list(centers))[None, :],
                        np.zeros((1, m)), random_starts])
    step = m / 4.0  # half of 1/L with L = 2/m, so plain descent is monotone
    x = starts.copy()
    for _ in range(_DESCENT_ITERS):
        x -= step * _rational_mean_gradient_rows(x, centers)
    total = 0.0
    for j in range(m):
        h_j = np.mean(_phi(x[:, j][None, :] - centers[:, j][:, None]), axis=0) / m
        total += float(np.min(h_j))
    return total - _F_STAR_SLACK


def _worker_gradient(spec: ProblemSpec, worker_id: int, x: np.ndarray) -> np.ndarray:
    if spec.kind == QUADRATIC:
        if spec._curvature_diag is not None:
            return spec._curvature_diag * (x - spec.centers[worker_id])
        return spec.curvature @ (x - spec.centers[worker_id])
    return _phi_prime(x - spec.centers[worker_id]) / spec.dimension


def worker_gradients(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Exact grad f_i(points[i]) for every worker, batched.

    Row i is bit-identical to the single-worker gradient at points[i]; the
    batched form only vectorizes elementwise arithmetic across rows.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (spec.num_workers, spec.dimension):
        raise ValueError("points must have shape (num_workers, dimension)")
    if spec.kind == QUADRATIC:
        if spec._curvature_diag is not None:
            return spec._curvature_diag[None, :] * (points - spec.centers)
        return np.stack([_worker_gradient(spec, i, points[i]) for i in range(spec.num_workers)])
    return _phi_prime(points - spec.centers) / spec.dimension


def _check_point(spec: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dimension,):
        raise ValueError(f"point must have shape ({spec.dimension},), got {x.shape}")
    return x


def _check_worker(spec: ProblemSpec, worker_id: int) -> int:
    if not 0 <= worker_id < spec.num_workers:
        raise ValueError(f"unknown worker_id {worker_id} (have {spec.num_workers} workers)")
    return worker_id


def sample_gradient(
    spec: ProblemSpec, worker_id: int, x, stream: RngStream, iteration: int = 0
) -> GradSample:
    """Exact grad f_i(x) plus isotropic Gaussian noise with E||noise||^2 = sigma^2.

    Always consumes the same number of stream words, sigma = 0 included, so
    the stream position depends only on how many samples were drawn.
    """
    x = _check_point(spec, x)
    _check_worker(spec, worker_id)
    noise = gaussian_vector(stream, spec.dimension, spec.noise_sigma)
    return GradSample(g=_worker_gradient(spec, worker_id, x) + noise,
                      worker_id=worker_id, iteration=iteration)


def mean_gradient(spec: ProblemSpec, worker_id, x) -> np.ndarray:
    """Exact analytic gradient of f_i, or of f when worker_id is ALL_WORKERS."""
    x = _check_point(spec, x)
    if worker_id is ALL_WORKERS:
        if spec.kind == QUADRATIC:
            if spec._curvature_diag is not None:
                return spec._curvature_diag * (x - spec.mean_center)
            return spec.curvature @ (x - spec.mean_center)
        return _rational_mean_gradient_rows(x[None, :], spec.centers)[0]
    return _worker_gradient(spec, _check_worker(spec, worker_id), x)


def objective_value(spec: ProblemSpec, x) -> float:
    """Exact f(x)."""
    x = _check_point(spec, x)
    if spec.kind == QUADRATIC:
        total = 0.0
        for i in range(spec.num_workers):
            d = x - spec.centers[i]
            total += 0.5 * float(d @ (spec.curvature @ d))
        return total / spec.num_workers
    return float(np.sum(np.mean(_phi(x[None, :] - spec.centers), axis=0)) / spec.dimension)


def deviation_norm(spec: ProblemSpec, x) -> float:
    """Exact (1/N) sum_i ||grad f_i(x) - grad f(x)||^2."""
    x = _check_point(spec, x)
    grads = np.stack([_worker_gradient(spec, i, x) for i in range(spec.num_workers)])
    mean = fixed_order_mean(list(grads))
    return float(np.sum((grads - mean[None, :]) ** 2) / spec.num_workers)


def problem_to_json(spec: ProblemSpec) -> str:
    """Serialize to a JSON document (arrays row-major) for replayable runs."""
    doc = {
        "kind": spec.kind,
        "dimension": spec.dimension,
        "num_workers": spec.num_workers,
        "centers": spec.centers.tolist(),
        "curvature": None if spec.curvature is None else spec.curvature.tolist(),
        "noise_sigma": spec.noise_sigma,
        "certified_L": spec.certified_L,
        "certified_kappa": spec.certified_kappa,
        "f_star": spec.f_star,
        "mean_center": spec.mean_center.tolist(),
        "sampling_box": None if spec.sampling_box is None else spec.sampling_box.tolist(),
    }
    return json.dumps(doc, indent=2)


def problem_from_json(text: str) -> ProblemSpec:
    doc = json.loads(text)
    known = {
        "kind", "dimension", "num_workers", "centers", "curvature", "noise_sigma",
        "certified_L", "certified_kappa", "f_star", "mean_center", "sampling_box",
    }
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown problem fields: {sorted(unknown)}")
    curvature = doc.get("curvature")
    box = doc.get("sampling_box")
    return ProblemSpec(
        kind=doc["kind"],
        dimension=int(doc["dimension"]),
        num_workers=int(doc["num_workers"]),
        centers=np.asarray(doc["centers"], dtype=np.float64),
        curvature=None if curvature is None else np.asarray(curvature, dtype=np.float64),
        noise_sigma=float(doc["noise_sigma"]),
        certified_L=float(doc["certified_L"]),
        certified_kappa=float(doc["certified_kappa"]),
        f_star=float(doc["f_star"]),
        mean_center=np.asarray(doc["mean_center"], dtype=np.float64),
        sampling_box=None if box is None else np.asarray(box, dtype=np.float64),
    )
