"""Embedding of symmetric PSD tensors into (size-and-)shape space.

A nonzero symmetric positive semidefinite m x m tensor ``a`` factors
uniquely as ``a = u^T u`` with ``u`` in a canonical echelon domain of upper
triangular matrices (leading entries positive, pivot columns strictly
increasing, zero rows at the bottom, and a nonnegative last diagonal
entry).  Viewing ``u`` as an m x m configuration of m+1 landmarks embeds
tensors of rank >= m-1 injectively into the manifold part of size-and-shape
space, where Frechet means and the CLT machinery apply; mean size-and-shapes
are pulled back through the factorization to mean tensors.

The factorization extends the classical Cholesky decomposition to the
rank-deficient case and is computed here by a rank-revealing outer-product
elimination, numerically far more accurate than the equivalent construction
via an eigendecomposition followed by Gram-Schmidt; uniqueness of the
canonical factor makes the two routes interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .geometry import Configuration, ShapePoint, SizeShapePoint, _entries, to_preshape
from .means import MeanConfig, Rho, solve_stack

#: Entry-wise symmetry tolerance and eigenvalue floor for tensors.
PSD_TOL = 1e-10

#: Pivot threshold (relative to the largest diagonal entry) deciding rank.
PIVOT_RTOL = 1e-12


class NotPositiveSemidefiniteError(ValueError):
    """Input tensor has an eigenvalue below the PSD tolerance."""


class PullbackError(ValueError):
    """A mean size-and-shape has no tensor preimage (negative last pivot)."""


@dataclass(frozen=True, eq=False)
class DiffusionTensor:
    """Nonzero symmetric PSD matrix."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("tensor must be square")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.T).max() > PSD_TOL * scale:
            raise ValueError("tensor must be symmetric")
        a = 0.5 * (a + a.T)
        w = np.linalg.eigvalsh(a)
        if w[0] < -PSD_TOL * scale:
            raise NotPositiveSemidefiniteError(f"eigenvalue {w[0]:.3e} below zero")
        if w[-1] <= 0.0:
            raise ValueError("tensor must be nonzero")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def rank(self, tol: float = PSD_TOL) -> int:
        w = np.linalg.eigvalsh(self.entries)
        return int(np.sum(w > tol * max(1.0, w[-1])))


@dataclass(frozen=True, eq=False)
class UpperTriangularCanonical:
    """Echelon upper-triangular matrix with its pivot columns.

    Leading entries are positive except possibly in the last row; rows
    without a pivot are zero and sit at the bottom.
    """

    entries: np.ndarray
    pivots: tuple

    def __post_init__(self):
        u = np.array(self.entries, dtype=float)
        u.setflags(write=False)
        object.__setattr__(self, "entries", u)
        object.__setattr__(self, "pivots", tuple(int(p) for p in self.pivots))
        _validate_canonical(u, self.pivots)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def rank(self) -> int:
        return len(self.pivots)


def _validate_canonical(u: np.ndarray, pivots: tuple, tol: float = 1e-12):
    m = u.shape[0]
    if u.ndim != 2 or u.shape[1] != m:
        raise ValueError("canonical matrix must be square")
    if any(b <= a for a, b in zip(pivots, pivots[1:])):
        raise ValueError("pivot columns must strictly increase")
    scale = max(1.0, float(np.abs(u).max()))
    for i, j in enumerate(pivots):
        if np.abs(u[i, :j]).max(initial=0.0) > tol * scale:
            raise ValueError(f"nonzero entry left of pivot in row {i}")
        if i < m - 1 and u[i, j] <= 0:
            raise ValueError(f"leading entry of row {i} must be positive")
    if len(pivots) < m and np.abs(u[len(pivots):]).max(initial=0.0) > tol * scale:
        raise ValueError("rows without pivot must be zero")


def rotation_triangular_factor(b: np.ndarray):
    """Factor a square matrix as b = g u with g in SO(m), u canonical echelon.

    Gram-Schmidt over the columns of b: each new independent column yields a
    pivot with positive leading entry; when b has full rank the sign of the
    last pivot is flipped if needed so that g stays orientation preserving
    (this is the one place a negative diagonal entry can appear).
    """
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    if b.ndim != 2 or b.shape[1] != m:
        raise ValueError("need a square matrix")
    tol = 1e-12 * max(1.0, float(np.linalg.norm(b)))
    cols: list[np.ndarray] = []
    pivots: list[int] = []
    u = np.zeros((m, m))
    for j in range(m):
        v = b[:, j].copy()
        for i, c in enumerate(cols):
            u[i, j] = float(c @ b[:, j])
            v -= u[i, j] * c
        nv = float(np.linalg.norm(v))
        if nv > tol and len(cols) < m:
            cols.append(v / nv)
            u[len(cols) - 1, j] = nv
            pivots.append(j)
    r = len(cols)
    g = np.zeros((m, m))
    for i, c in enumerate(cols):
        g[:, i] = c
    if r < m:
        # complete orthonormally; free columns absorb the orientation fix
        C = np.stack(cols, axis=1) if cols else np.zeros((m, 0))
        U, S, _ = np.linalg.svd(C, full_matrices=True)
        g[:, r:] = U[:, r:]
        if np.linalg.det(g) < 0:
            g[:, -1] = -g[:, -1]
    elif np.linalg.det(g) < 0:
        g[:, -1] = -g[:, -1]
        u[-1, :] = -u[-1, :]
    return g, UpperTriangularCanonical(u, tuple(pivots))


def extended_cholesky(a) -> UpperTriangularCanonical:
    """Canonical factor u with u^T u = a for nonzero symmetric PSD a.

    Rank-revealing outer-product elimination: a diagonal entry of the
    running Schur complement below PIVOT_RTOL times the largest diagonal
    counts as zero and its row is skipped, which puts zero rows at the
    bottom and keeps every leading entry positive.
    """
    a = DiffusionTensor(_entries(a)) if not isinstance(a, DiffusionTensor) else a
    S = a.entries.copy()
    m = a.m
    scale = max(1.0, float(np.max(np.diag(S))))
    u = np.zeros((m, m))
    pivots = []
    i = 0
    for j in range(m):
        if S[j, j] > PIVOT_RTOL * scale:
            piv = np.sqrt(S[j, j])
            u[i, j:] = S[j, j:] / piv
            S[j:, j:] -= np.outer(u[i, j:], u[i, j:])
            pivots.append(j)
            i += 1
    return UpperTriangularCanonical(u, tuple(pivots))


def tau_s(a) -> SizeShapePoint:
    """Embed a tensor into size-and-shape space (size retained).

    The canonical factor is read as an m x m configuration of m+1
    landmarks.  For rank < m-1 the image leaves the manifold part, which
    the returned point flags as rank deficient.
    """
    u = extended_cholesky(a)
    return SizeShapePoint(Configuration(u.entries))


def tau(a) -> ShapePoint:
    """Embed a tensor into shape space (unit size)."""
    u = extended_cholesky(a)
    return ShapePoint(to_preshape(u.entries))


def mean_tensor(tensors, rho: Rho = Rho.PARTIAL_PROCRUSTES,
                cfg: MeanConfig | None = None) -> DiffusionTensor:
    """Frechet mean tensor: embed, average in size-and-shape space, pull back.

    Requires every input to have rank >= m-1.  ``rho`` may be partial or
    ziezold; on size-and-shape space the chordal aligned distance is the
    metric itself, so both run the align-and-average iteration.  The pulled
    back mean must stay in the canonical domain: a negative last pivot
    (orientation-reversing mean representative) raises PullbackError rather
    than silently projecting.
    """
    if rho is Rho.FULL_PROCRUSTES:
        raise ValueError("tensor means live in size-and-shape space; use partial or ziezold")
    tensors = [t if isinstance(t, DiffusionTensor) else DiffusionTensor(_entries(t))
               for t in tensors]
    if not tensors:
        raise ValueError("cannot average an empty sample")
    m = tensors[0].m
    for t in tensors:
        if t.m != m:
            raise ValueError("all tensors must have the same dimension")
        if t.rank() < m - 1:
            raise ValueError("tensor rank below m-1: embedding not injective there")
    stack = np.stack([extended_cholesky(t).entries for t in tensors])
    cfg = cfg or MeanConfig(rho=Rho.PARTIAL_PROCRUSTES)
    mu, _, _, converged, *_ = solve_stack(stack, cfg, Rho.PARTIAL_PROCRUSTES)
    if not converged:
        raise RuntimeError("size-and-shape mean solver did not converge")
    _, u = rotation_triangular_factor(mu)
    if u.rank == m and u.entries[m - 1, m - 1] < 0:
        raise PullbackError(
            "mean size-and-shape falls outside the tensor domain "
            "(negative last pivot); no tensor preimage exists"
        )
    e = u.entries
    return DiffusionTensor(e.T @ e)


@dataclass
class BiasCheckResult:
    """Monte-Carlo check that Cholesky factors of noisy Gram matrices are biased."""

    empirical_mean: float
    lower_bound: float
    mc_stderr: float
    lemma_applies: bool
    m: int
    samples: int


def cholesky_bias_check(m: int, samples: int, rng=0) -> BiasCheckResult:
    """Mean of the (1,1) Cholesky entry of (I + eps)^T (I + eps), eps standard normal.

    The analytic lower bound sqrt(2) Gamma((m+1)/2) / Gamma(m/2) exceeds one
    for m > 1, so the expected factor differs from the identity; for m = 1
    the bound drops below one and the result is flagged as inapplicable.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 200_000
    eye = np.eye(m)
    while done < samples:
        c = min(chunk, samples - done)
        b = eye[None] + rng.standard_normal((c, m, m))
        a = np.swapaxes(b, 1, 2) @ b
        vals = np.linalg.cholesky(a)[:, 0, 0]
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        done += c
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    bound = float(np.exp(0.5 * np.log(2.0) + gammaln((m + 1) / 2.0) - gammaln(m / 2.0)))
    return BiasCheckResult(
        empirical_mean=mean,
        lower_bound=bound,
        mc_stderr=float(np.sqrt(var / samples)),
        lemma_applies=m > 1,
        m=m,
        samples=samples,
    )


# -- symmetric-matrix CSV I/O -------------------------------------------------

def save_tensors(path, tensors):
    """Write tensors as CSV: first line m, then upper-triangle rows (row-major)."""
    tensors = [t if isinstance(t, DiffusionTensor) else DiffusionTensor(_entries(t))
               for t in tensors]
    if not tensors:
        raise ValueError("nothing to save")
    m = tensors[0].m
    iu = np.triu_indices(m)
    with open(path, "w") as fh:
        fh.write(f"{m}\n")
        for t in tensors:
            fh.write(",".join(f"{v:.17g}" for v in t.entries[iu]) + "\n")


def load_tensors(path) -> list[DiffusionTensor]:
    """Read tensors from the upper-triangle CSV format written by save_tensors."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty tensor file")
    try:
        m = int(lines[0])
    except ValueError as exc:
        raise ValueError(f"{path}: header must be the dimension m") from exc
    iu = np.triu_indices(m)
    out = []
    for lineno, ln in enumerate(lines[1:], start=2):
        vals = [float(v) for v in ln.split(",")]
        if len(vals) != len(iu[0]):
            raise ValueError(f"{path}: line {lineno}: expected {len(iu[0])} entries")
        a = np.zeros((m, m))
        a[iu] = vals
        a = a + np.triu(a, 1).T
        out.append(DiffusionTensor(a))
    if not out:
        raise ValueError(f"{path}: no tensors after header")
    return out
