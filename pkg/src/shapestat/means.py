"""Iterative Frechet mean solvers on shape and size-and-shape space.

Three mean families are provided, one per distance:

* full Procrustes mean (shape space, residual distance): generalized
  Procrustes iteration that rotates every datum into optimal position,
  rescales it by its inner product with the current estimate, averages and
  projects back to the sphere,
* partial Procrustes mean (size-and-shape space): the same iteration
  without the rescaling or the projection,
* Ziezold mean (shape space, chordal distance): rotate, average, project.

Each solver decreases its Frechet sum of squares monotonically and stops
once the decrease per sweep falls below a tolerance.  For planar data the
full Procrustes mean has a closed-form oracle, the leading eigenvector of
the complex sum-of-squares matrix, exposed as :func:`extrinsic_mean_2d`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .geometry import (
    Configuration,
    ShapePoint,
    SizeShapePoint,
    _entries,
    align_stack,
    dist_shape_procrustes,
    dist_shape_ziezold,
    dist_sizeshape,
    to_preshape,
)


class Rho(enum.Enum):
    """Distance family selecting a Frechet mean."""

    FULL_PROCRUSTES = "full"
    PARTIAL_PROCRUSTES = "partial"
    ZIEZOLD = "ziezold"


def rho_distance(rho: Rho):
    """Distance function belonging to a mean family."""
    return {
        Rho.FULL_PROCRUSTES: dist_shape_procrustes,
        Rho.PARTIAL_PROCRUSTES: dist_sizeshape,
        Rho.ZIEZOLD: dist_shape_ziezold,
    }[rho]


class NonUniqueMeanError(ValueError):
    """The extrinsic eigenvector mean is not unique (eigenvalue gap ~ 0)."""


@dataclass
class MeanConfig:
    """Solver settings.

    ``tol`` bounds the objective decrease per sweep at convergence,
    ``restarts`` adds solver runs from random seeded starting points, and
    ``explicit_tangent`` switches the full Procrustes update to an explicit
    tangent-space projection step (same fixed points, used for
    cross-checking).
    """

    rho: Rho = Rho.FULL_PROCRUSTES
    max_iter: int = 200
    tol: float = 1e-10
    restarts: int = 0
    seed: int = 0
    explicit_tangent: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")


@dataclass
class MeanResult:
    """Converged mean with diagnostics.

    ``dropped_scales`` counts datum/sweep pairs whose optimal scale was
    nonpositive and that were therefore left out of a full Procrustes
    averaging step.  ``restart_spread`` is the largest distance between the
    returned mean and any restart solution (0.0 without restarts); a spread
    above ~1e-6 signals that distinct local minima were found, so the mean
    should not be treated as unique.
    """

    mean: ShapePoint | SizeShapePoint
    objective: float
    iterations: int
    converged: bool
    rho: Rho
    dropped_scales: int = 0
    restart_spread: float = 0.0
    objective_trace: list = field(default_factory=list, repr=False)


_MAX_INIT_CANDIDATES = 64


def _objective(stack: np.ndarray, mu: np.ndarray, rho: Rho) -> float:
    # computed from aligned residuals, which stays accurate near zero
    g, inner = align_stack(stack, mu)
    aligned = g @ stack
    if rho is Rho.FULL_PROCRUSTES:
        lam = np.maximum(inner, 0.0)
        res = lam[:, None, None] * aligned - mu
    else:  # Ziezold and partial Procrustes share the aligned chord
        res = aligned - mu
    return float(np.einsum("nij,nij->", res, res))


def _best_datum_start(stack: np.ndarray, rho: Rho) -> np.ndarray:
    # exact argmin over all data for small samples; for large ones, a fixed
    # evenly spaced candidate/evaluation subsample keeps this O(n)
    n = stack.shape[0]
    if n <= _MAX_INIT_CANDIDATES:
        idx = np.arange(n)
        probe = stack
    else:
        idx = np.linspace(0, n - 1, 16).astype(int)
        probe = stack[np.linspace(0, n - 1, 256).astype(int)]
    objs = [_objective(probe, stack[i], rho) for i in idx]
    return stack[idx[int(np.argmin(objs))]].copy()


def _iterate(stack: np.ndarray, mu0: np.ndarray, cfg: MeanConfig, rho: Rho):
    """One solver run from mu0; returns (mu, obj, iters, converged, dropped, trace).

    Each sweep performs exactly one batched alignment: the objective at the
    current estimate is read off the same alignment that drives the update.
    """
    mu = mu0.copy()
    trace: list[float] = []
    dropped = 0
    converged = False
    sweeps = 0
    for head in range(cfg.max_iter + 1):
        g, inner = align_stack(stack, mu)
        aligned = g @ stack
        if rho is Rho.FULL_PROCRUSTES:
            lam = np.maximum(inner, 0.0)
            scaled = lam[:, None, None] * aligned
            res = scaled - mu
        else:
            res = aligned - mu
        trace.append(float(np.einsum("nij,nij->", res, res)))
        if head > 0 and abs(trace[-2] - trace[-1]) < cfg.tol:
            converged = True
            break
        if head == cfg.max_iter:
            break
        if rho is Rho.FULL_PROCRUSTES:
            dropped += int(np.count_nonzero(inner <= 0.0))
            if cfg.explicit_tangent:
                tbar = scaled.mean(axis=0)
                tbar -= float(np.sum(tbar * mu)) * mu
                nxt = mu + tbar
            else:
                nxt = scaled.mean(axis=0)
            norm = np.linalg.norm(nxt)
            if norm <= 1e-300:
                break  # collapsed update, keep the current estimate
            mu = nxt / norm
        elif rho is Rho.ZIEZOLD:
            nxt = aligned.mean(axis=0)
            norm = np.linalg.norm(nxt)
            if norm <= 1e-300:
                break
            mu = nxt / norm
        else:
            mu = aligned.mean(axis=0)
        sweeps += 1
    return mu, trace[-1], sweeps, converged, dropped, trace


def _random_start(stack: np.ndarray, rho: Rho, rng: np.random.Generator) -> np.ndarray:
    draw = rng.standard_normal(stack.shape[1:])
    draw /= np.linalg.norm(draw)
    if rho is Rho.PARTIAL_PROCRUSTES:
        draw *= float(np.sqrt(np.einsum("nij,nij->n", stack, stack).mean()))
    return draw


def solve_stack(stack: np.ndarray, cfg: MeanConfig, rho: Rho):
    """Low-level solver on an (n, m, q) stack of representatives.

    Returns (mu, objective, iterations, converged, dropped, spread, trace).
    Initialization is the datum with the smallest Frechet objective (among
    at most 64 evenly spaced candidates for large n), plus optional random
    restarts; the best run wins and the spread across runs is reported.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ValueError("need a nonempty (n, m, q) stack")
    runs = [_iterate(stack, _best_datum_start(stack, rho), cfg, rho)]
    for r in range(cfg.restarts):
        rng = streams.stream(cfg.seed, r + 1)
        runs.append(_iterate(stack, _random_start(stack, rho, rng), cfg, rho))
    best = min(runs, key=lambda run: run[1])
    spread = 0.0
    if len(runs) > 1:
        dist = rho_distance(rho)
        spread = max(dist(best[0], run[0]) for run in runs)
    mu, obj, iters, converged, dropped, trace = best
    return mu, obj, iters, converged, dropped, spread, trace


def _as_stack(data, unit: bool) -> np.ndarray:
    if len(data) == 0:
        raise ValueError("cannot average an empty sample")
    arrs = [_entries(x) for x in data]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("all data must share the same dimensions")
    stack = np.stack(arrs)
    if unit:
        norms = np.linalg.norm(stack.reshape(len(arrs), -1), axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("shape-space means need unit-norm pre-shapes")
    return stack


def _result(mu, obj, iters, converged, dropped, spread, trace, rho, shape_space: bool) -> MeanResult:
    if shape_space:
        point = ShapePoint(to_preshape(mu))
    else:
        point = SizeShapePoint(Configuration(mu))
    return MeanResult(
        mean=point,
        objective=obj,
        iterations=iters,
        converged=converged,
        rho=rho,
        dropped_scales=dropped,
        restart_spread=spread,
        objective_trace=trace,
    )


def full_procrustes_mean(data, cfg: MeanConfig | None = None) -> MeanResult:
    """Full Procrustes mean of pre-shapes (GPA with rotation and scale)."""
    cfg = cfg or MeanConfig()
    stack = _as_stack(data, unit=True)
    out = solve_stack(stack, cfg, Rho.FULL_PROCRUSTES)
    return _result(*out, Rho.FULL_PROCRUSTES, shape_space=True)


def ziezold_mean(data, cfg: MeanConfig | None = None) -> MeanResult:
    """Ziezold mean of pre-shapes (rotate, average, renormalize)."""
    cfg = cfg or MeanConfig()
    stack = _as_stack(data, unit=True)
    out = solve_stack(stack, cfg, Rho.ZIEZOLD)
    return _result(*out, Rho.ZIEZOLD, shape_space=True)


def partial_procrustes_mean(data, cfg: MeanConfig | None = None) -> MeanResult:
    """Partial Procrustes mean of configurations (no scaling step)."""
    cfg = cfg or MeanConfig()
    stack = _as_stack(data, unit=False)
    out = solve_stack(stack, cfg, Rho.PARTIAL_PROCRUSTES)
    return _result(*out, Rho.PARTIAL_PROCRUSTES, shape_space=False)


def frechet_mean(data, cfg: MeanConfig) -> MeanResult:
    """Dispatch on cfg.rho."""
    return {
        Rho.FULL_PROCRUSTES: full_procrustes_mean,
        Rho.PARTIAL_PROCRUSTES: partial_procrustes_mean,
        Rho.ZIEZOLD: ziezold_mean,
    }[cfg.rho](data, cfg)


def extrinsic_mean_2d(data, gap_tol: float = 1e-10) -> ShapePoint:
    """Closed-form full Procrustes mean for planar pre-shapes.

    Identifying rows with real and imaginary parts, the mean shape is the
    shape of a unit eigenvector to the largest eigenvalue of the averaged
    complex sum-of-squares matrix.  Raises NonUniqueMeanError when the top
    eigenvalue gap falls below ``gap_tol``.
    """
    stack = _as_stack(data, unit=True)
    if stack.shape[1] != 2:
        raise ValueError("the eigenvector mean is only defined for planar data (m=2)")
    Z = stack[:, 0, :] + 1j * stack[:, 1, :]
    S = Z.conj().T @ Z / len(Z)
    vals, vecs = np.linalg.eigh(S)
    if len(vals) > 1 and vals[-1] - vals[-2] < gap_tol:
        raise NonUniqueMeanError(
            f"top eigenvalue gap {vals[-1] - vals[-2]:.3e} below {gap_tol:.1e}"
        )
    lead = vecs[:, -1].conj()
    rep = np.vstack([lead.real, lead.imag])
    return ShapePoint(to_preshape(rep))
