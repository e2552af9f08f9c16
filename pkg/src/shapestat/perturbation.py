"""Perturbation-model samplers and compatibility experiments.

Three additive-noise models on configurations are supported:

* ``GOODALL``: x = mu + eps with isotropic Gaussian eps, projected to the
  pre-shape sphere.  Scale, rotation and translation nuisance parameters
  are fixed to identity since they leave the shape invariant.
* ``GEODESIC``: x = mu + s nu + eps with Gaussian drift s along a straight
  line whose points are locally in mutual optimal position.
* ``DIFFUSION_TENSOR``: x = (mu + eps)^T (mu + eps), an upper-triangular
  perturbation of a tensor square root, embedded into size-and-shape space.

Noise is applied directly to the centered (Helmertized) configuration; for
isotropic errors this is equivalent to perturbing raw landmarks and
re-centering, because centering is an orthogonal projection.

The compatibility experiment measures whether the Frechet mean of the model
agrees with the shape of the perturbation mean mu: it draws N independent
samples of size n, computes the per-sample mean nu_j, and reports

    d_hat     = rms distance of the nu_j to [mu],
    sigma_hat = rms distance of the nu_j to their own Frechet mean,

so d_hat >> sigma_hat flags a model/geometry incompatibility that cannot be
explained by sampling noise.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from . import difftensor, streams
from .geometry import (
    Configuration,
    PreShape,
    ShapePoint,
    SizeShapePoint,
    _entries,
    align_stack,
    dist_shape_procrustes,
    dist_sizeshape,
    to_preshape,
)
from .means import MeanConfig, Rho, solve_stack


class PerturbationKind(enum.Enum):
    GOODALL = "goodall"
    GEODESIC = "geodesic"
    DIFFUSION_TENSOR = "difftensor"


class ErrorShape(enum.Enum):
    ISOTROPIC = "isotropic"
    UPPER_TRIANGULAR = "upper-triangular"


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class PerturbationSpec:
    """Model parameters.

    ``mu`` is the perturbation mean: a centered configuration for the
    GOODALL and GEODESIC kinds, an upper-triangular tensor square root for
    DIFFUSION_TENSOR.  ``nu`` and ``s_dist`` (drift direction and standard
    deviation of the drift) apply to the GEODESIC kind only.
    """

    kind: PerturbationKind
    mu: np.ndarray
    sigma: float
    error_shape: ErrorShape = ErrorShape.ISOTROPIC
    nu: np.ndarray | None = None
    s_dist: float | None = None

    def __post_init__(self):
        self.mu = np.asarray(_entries(self.mu), dtype=float)
        if self.mu.ndim != 2 or np.linalg.norm(self.mu) == 0.0:
            raise ValueError("mu must be a nonzero matrix")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.kind is PerturbationKind.GEODESIC:
            if self.nu is None or self.s_dist is None:
                raise ValueError("the geodesic model needs nu and s_dist")
            self.nu = np.asarray(_entries(self.nu), dtype=float)
            if self.nu.shape != self.mu.shape:
                raise ValueError("nu must match the dimensions of mu")
            if self.s_dist <= 0:
                raise ValueError("s_dist must be positive")
            self._check_local_optimal_position()
        elif self.kind is PerturbationKind.DIFFUSION_TENSOR:
            if self.mu.shape[0] != self.mu.shape[1]:
                raise ValueError("the tensor model needs a square mu")
        if self.error_shape is ErrorShape.UPPER_TRIANGULAR and (
            self.kind is not PerturbationKind.DIFFUSION_TENSOR
        ):
            raise ValueError("upper-triangular errors apply to the tensor model only")

    def _check_local_optimal_position(self):
        # Nearby points mu + s nu must already be optimally rotated to each
        # other, i.e. the plain inner product attains the SO(m) maximum.
        s0 = min(float(self.s_dist), 0.1)
        scale = np.linalg.norm(self.mu) * max(np.linalg.norm(self.nu), 1.0)
        for s in (s0, -s0):
            p = self.mu + s * self.nu
            _, inner = align_stack(self.mu[None], p)
            plain = float(np.sum(self.mu * p))
            if abs(float(inner[0]) - plain) > 1e-8 * max(scale, 1.0):
                raise ValueError(
                    "points along the drift line are not locally in optimal position"
                )


def sample_stack(spec: PerturbationSpec, n: int, rng) -> np.ndarray:
    """Raw (n, m, q) stack of sampled representatives (fast path).

    GOODALL and GEODESIC return unit-norm pre-shape representatives,
    DIFFUSION_TENSOR returns upper-triangular size-and-shape
    representatives u with u^T u the sampled tensor.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = _as_rng(rng)
    m, q = spec.mu.shape
    if spec.kind is PerturbationKind.DIFFUSION_TENSOR:
        eps = rng.standard_normal((n, m, m)) * spec.sigma
        if spec.error_shape is ErrorShape.UPPER_TRIANGULAR:
            eps = np.triu(eps)
        b = spec.mu + eps
        a = np.swapaxes(b, 1, 2) @ b
        try:
            u = np.swapaxes(np.linalg.cholesky(a), 1, 2)
        except np.linalg.LinAlgError:
            u = np.stack([difftensor.extended_cholesky(ai).entries for ai in a])
        return u
    if spec.kind is PerturbationKind.GEODESIC:
        s = rng.normal(0.0, spec.s_dist, n)
        x = spec.mu[None] + s[:, None, None] * spec.nu[None]
        if spec.sigma > 0:
            x = x + rng.standard_normal((n, m, q)) * spec.sigma
    else:
        x = spec.mu[None] + rng.standard_normal((n, m, q)) * spec.sigma
    norms = np.linalg.norm(x.reshape(n, -1), axis=1)
    if np.any(norms <= 1e-300):
        raise ValueError("a sampled configuration degenerated to zero")
    return x / norms[:, None, None]


def sample(spec: PerturbationSpec, n: int, rng):
    """Sample the model: pre-shapes, or size-and-shapes for the tensor kind."""
    stack = sample_stack(spec, n, rng)
    if spec.kind is PerturbationKind.DIFFUSION_TENSOR:
        return [SizeShapePoint(Configuration(u)) for u in stack]
    return [PreShape(x) for x in stack]


@dataclass
class CompatibilityReport:
    """Outcome of one compatibility experiment (see module docstring)."""

    kind: str
    mu_id: str
    sigma: float
    n: int
    N: int
    rho: Rho
    d_hat: float
    sigma_hat: float
    seed: int
    wall_millis: float
    mean_solve_millis: float = 0.0

    def __post_init__(self):
        if self.d_hat < 0 or self.sigma_hat < 0:
            raise ValueError("distances must be nonnegative")

    def csv_row(self) -> list:
        return [self.kind, self.mu_id, self.sigma, self.n, self.N,
                self.rho.value, self.d_hat, self.sigma_hat, self.seed,
                self.wall_millis]


CSV_HEADER = ["kind", "mu_id", "sigma", "n", "N", "rho", "d_hat", "sigma_hat",
              "seed", "wall_millis"]


def _solver_space(spec: PerturbationSpec, rho: Rho):
    """(solver rho, distance fn, reference representative)."""
    if spec.kind is PerturbationKind.DIFFUSION_TENSOR:
        if rho is Rho.FULL_PROCRUSTES:
            raise ValueError(
                "tensor samples live in size-and-shape space; use partial or ziezold"
            )
        # On size-and-shape space the chordal aligned distance is the metric
        # itself, so the ziezold toggle runs the same align-and-average solver.
        ref = difftensor.extended_cholesky(spec.mu.T @ spec.mu).entries
        return Rho.PARTIAL_PROCRUSTES, dist_sizeshape, ref
    ref = spec.mu / np.linalg.norm(spec.mu)
    if rho is Rho.PARTIAL_PROCRUSTES:
        return Rho.PARTIAL_PROCRUSTES, dist_sizeshape, ref
    return rho, dist_shape_procrustes, ref


def compatibility_experiment(
    spec: PerturbationSpec,
    n: int,
    N: int,
    rho: Rho,
    seed: int = 0,
    mu_id: str = "",
    mean_cfg: MeanConfig | None = None,
    stream_key: tuple = (),
) -> CompatibilityReport:
    """Estimate d_hat and sigma_hat from N replicate samples of size n.

    Replicate j draws from the seeded stream (seed, *stream_key, j), so
    reports are reproducible bit-for-bit for a fixed seed and independent of
    the SHAPESTAT_THREADS worker count; ``stream_key`` decorrelates several
    experiment cells sharing one user seed.
    """
    if n < 2 or N < 2:
        raise ValueError("need n >= 2 and N >= 2")
    cfg = mean_cfg or MeanConfig()
    solver_rho, dist, ref = _solver_space(spec, rho)
    t0 = time.perf_counter()
    solve_ms = 0.0

    def one_replicate(j: int):
        stack = sample_stack(spec, n, streams.stream(seed, *stream_key, j))
        t1 = time.perf_counter()
        mu, _, _, converged, *_ = solve_stack(stack, cfg, solver_rho)
        dt = time.perf_counter() - t1
        if not converged:
            raise RuntimeError(f"mean solver did not converge in replicate {j}")
        return mu, dt

    outcomes = streams.parallel_map(one_replicate, range(N))
    mean_reps = np.stack([mu for mu, _ in outcomes])
    solve_ms += 1e3 * sum(dt for _, dt in outcomes)

    t1 = time.perf_counter()
    mom, _, _, mom_conv, *_ = solve_stack(mean_reps, cfg, solver_rho)
    solve_ms += 1e3 * (time.perf_counter() - t1)
    if not mom_conv:
        raise RuntimeError("mean-of-means solver did not converge")

    d_sq = np.array([dist(nu_j, ref) ** 2 for nu_j in mean_reps])
    s_sq = np.array([dist(nu_j, mom) ** 2 for nu_j in mean_reps])
    wall = 1e3 * (time.perf_counter() - t0)
    return CompatibilityReport(
        kind=spec.kind.value,
        mu_id=mu_id,
        sigma=spec.sigma,
        n=n,
        N=N,
        rho=rho,
        d_hat=float(np.sqrt(d_sq.mean())),
        sigma_hat=float(np.sqrt(s_sq.mean())),
        seed=seed,
        wall_millis=wall,
        mean_solve_millis=solve_ms,
    )


# -- planar counterexample machinery ----------------------------------------

class KentBranch(enum.Enum):
    TOP_SHAPE = "top"
    BOTTOM_SHAPE = "bottom"


@dataclass
class KentMean:
    branch: KentBranch
    integrals: tuple[float, float]


def kent_integrals(eta: float) -> tuple[float, float]:
    """The two diagonal entries of the expected complex squares matrix.

    For a standard normal t, these are E[1 / (1 + eta^2 t^2)] and
    eta^2 E[t^2 / (1 + eta^2 t^2)]; they sum to one.  Quadrature runs over
    |t| <= 12 where the discarded Gaussian tail is below 1e-30.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")

    def f(t):
        return stats.norm.pdf(t) / (1.0 + eta**2 * t**2)

    i1 = integrate.quad(f, -12.0, 12.0, epsabs=1e-10, epsrel=1e-12, limit=200)[0]
    return float(i1), float(1.0 - i1)


def kent_population_mean(eta: float) -> KentMean:
    """Which of the two competing shapes is the population Procrustes mean.

    A linear three-landmark template with one landmark jittered along a
    line concentrates on a great circle; the mean sits at the template
    shape for small jitter and jumps to the antipodal cluster once the
    second eigenvalue of the expected squares matrix dominates.
    """
    i1, i2 = kent_integrals(eta)
    branch = KentBranch.TOP_SHAPE if i1 > i2 else KentBranch.BOTTOM_SHAPE
    return KentMean(branch=branch, integrals=(i1, i2))


def kent_critical_intensity(bracket=(0.1, 10.0), xtol: float = 1e-8) -> float:
    """Jitter intensity at which the two eigenvalues tie (mean jumps)."""
    lo, hi = bracket
    return float(optimize.brentq(lambda e: kent_integrals(e)[0] - 0.5, lo, hi, xtol=xtol))


def _kent_preshape(eta: float, t: float) -> np.ndarray:
    s = np.sqrt(1.0 + eta**2 * t**2)
    return np.array([[1.0 / s, eta * t / s], [0.0, 0.0]])


def hopf_coordinates(z) -> np.ndarray:
    """Map a planar three-landmark pre-shape to the shape sphere (radius 1/2).

    With complex columns (a1, a2) the map is
    (Re(a1 conj(a2)), Im(a1 conj(a2)), (|a1|^2 - |a2|^2) / 2); it is
    invariant under rotating the pre-shape.
    """
    e = _entries(z)
    if e.shape != (2, 2):
        raise ValueError("need a planar pre-shape with three landmarks (2 x 2)")
    a1 = complex(e[0, 0], e[1, 0])
    a2 = complex(e[0, 1], e[1, 1])
    prod = a1 * a2.conjugate()
    return np.array([prod.real, prod.imag, (abs(a1) ** 2 - abs(a2) ** 2) / 2.0])


@dataclass
class KentScatter:
    points: np.ndarray  # (n, 3) sphere coordinates of the sampled shapes
    mean_point: np.ndarray  # (3,) sphere coordinates of the sample mean
    mean_shape: ShapePoint


def kent_shape_scatter(eta: float, n: int, rng) -> KentScatter:
    """Sample the jittered-template model and map it to sphere coordinates."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    rng = _as_rng(rng)
    ts = rng.standard_normal(n)
    stack = np.stack([_kent_preshape(eta, t) for t in ts])
    points = np.stack([hopf_coordinates(x) for x in stack])
    mu, *_ = solve_stack(stack, MeanConfig(), Rho.FULL_PROCRUSTES)
    mean_shape = ShapePoint(to_preshape(mu))
    return KentScatter(points=points, mean_point=hopf_coordinates(mu),
                       mean_shape=mean_shape)
