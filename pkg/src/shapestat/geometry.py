"""Core geometry of Kendall's shape and size-and-shape spaces.

A landmark object is an m x k matrix (k landmarks in m dimensions).  Helmert
centering maps it to an m x (k-1) configuration; scaling to unit Frobenius
norm gives a pre-shape on the sphere.  Rotation orbits of pre-shapes are
shapes, rotation orbits of configurations are size-and-shapes.  This module
provides the centering, the orbit types, optimal rotation alignment and the
four quotient distances used throughout the package:

=================  ==============================================
intrinsic          arc length on the pre-shape sphere modulo rotation
full Procrustes    sine of the intrinsic distance (residual distance)
Ziezold            chord length modulo rotation, 2 sin(intrinsic / 2)
size-and-shape     rotation-aligned Euclidean distance, sizes kept
=================  ==============================================

All functions are pure; the value types hold read-only arrays and are safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Singular values below this count as zero when ranking configurations.
RANK_TOL = 1e-10

#: Allowed deviation of a pre-shape norm from one.
UNIT_NORM_TOL = 1e-12

#: Allowed deviation from orthogonality / unit determinant for rotations.
ROTATION_TOL = 1e-10


def helmert_matrix(k: int) -> np.ndarray:
    """Sub-Helmert matrix, shape (k, k-1), with orthonormal zero-sum columns.

    Column j (1-based) carries 1/sqrt(j(j+1)) in its first j rows and
    -j/sqrt(j(j+1)) in row j+1, zeros below.  Multiplying a raw m x k
    landmark matrix from the right removes the translation degree of
    freedom isometrically.
    """
    if k < 2:
        raise ValueError(f"need at least 2 landmarks, got k={k}")
    H = np.zeros((k, k - 1))
    for j in range(1, k):
        c = 1.0 / np.sqrt(j * (j + 1))
        H[:j, j - 1] = c
        H[j, j - 1] = -j * c
    return H


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def _entries(x) -> np.ndarray:
    """Unwrap any of the value types (or a bare array) to its matrix."""
    if isinstance(x, (ShapePoint, SizeShapePoint)):
        return x.rep.entries
    if isinstance(x, Configuration):
        return x.entries
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Configuration:
    """Centered m x (k-1) landmark configuration, not all landmarks equal."""

    entries: np.ndarray

    def __post_init__(self):
        e = _readonly(self.entries)
        if e.ndim != 2:
            raise ValueError("configuration must be a matrix")
        if e.shape[0] < 1 or e.shape[1] < e.shape[0]:
            raise ValueError(f"invalid configuration dimensions {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("configuration has non-finite entries")
        if np.linalg.norm(e) == 0.0:
            raise ValueError("degenerate configuration: all landmarks coincide")
        object.__setattr__(self, "entries", e)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def k(self) -> int:
        return self.entries.shape[1] + 1

    @property
    def size(self) -> float:
        """Frobenius norm (the size of the configuration)."""
        return float(np.linalg.norm(self.entries))


class PreShape(Configuration):
    """Configuration scaled to unit Frobenius norm (a point on the sphere)."""

    def __post_init__(self):
        super().__post_init__()
        n = np.linalg.norm(self.entries)
        if abs(n - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"pre-shape norm must be 1, got {n!r}")


@dataclass(frozen=True, eq=False)
class Rotation:
    """Element of SO(m)."""

    entries: np.ndarray

    def __post_init__(self):
        g = _readonly(self.entries)
        m = g.shape[0]
        if g.ndim != 2 or g.shape[1] != m:
            raise ValueError("rotation must be square")
        if np.abs(g.T @ g - np.eye(m)).max() > ROTATION_TOL:
            raise ValueError("matrix is not orthogonal")
        if abs(np.linalg.det(g) - 1.0) > ROTATION_TOL:
            raise ValueError("matrix is not orientation preserving")
        object.__setattr__(self, "entries", g)

    @property
    def m(self) -> int:
        return self.entries.shape[0]


def matrix_rank(entries: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(entries, compute_uv=False)
    return int(np.sum(s > tol))


@dataclass(frozen=True, eq=False)
class ShapePoint:
    """Rotation orbit of a pre-shape, carrying regularity flags.

    ``rank_deficient`` marks rank < m-1 (off the manifold part),
    ``strictly_regular`` marks full rank m.
    """

    rep: PreShape
    rank_deficient: bool = None  # type: ignore[assignment]
    strictly_regular: bool = None  # type: ignore[assignment]

    def __post_init__(self):
        r = matrix_rank(self.rep.entries)
        m = self.rep.m
        if self.rank_deficient is None:
            object.__setattr__(self, "rank_deficient", r < m - 1)
        if self.strictly_regular is None:
            object.__setattr__(self, "strictly_regular", r == m)
        if self.rank_deficient != (r < m - 1) or self.strictly_regular != (r == m):
            raise ValueError("rank flags inconsistent with representative")

    @property
    def m(self) -> int:
        return self.rep.m

    @property
    def k(self) -> int:
        return self.rep.k


@dataclass(frozen=True, eq=False)
class SizeShapePoint:
    """Rotation orbit of a configuration (size retained)."""

    rep: Configuration
    rank_deficient: bool = None  # type: ignore[assignment]
    strictly_regular: bool = None  # type: ignore[assignment]

    def __post_init__(self):
        r = matrix_rank(self.rep.entries)
        m = self.rep.m
        if self.rank_deficient is None:
            object.__setattr__(self, "rank_deficient", r < m - 1)
        if self.strictly_regular is None:
            object.__setattr__(self, "strictly_regular", r == m)
        if self.rank_deficient != (r < m - 1) or self.strictly_regular != (r == m):
            raise ValueError("rank flags inconsistent with representative")

    @property
    def m(self) -> int:
        return self.rep.m

    @property
    def k(self) -> int:
        return self.rep.k


def center(raw) -> Configuration:
    """Helmert-center a raw m x k landmark matrix into a Configuration.

    Raises ValueError when all landmarks coincide (zero after centering).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("landmark matrix must be 2-d")
    m, k = raw.shape
    out = raw @ helmert_matrix(k)
    if np.linalg.norm(out) <= 1e-12 * max(np.linalg.norm(raw), 1e-300):
        raise ValueError("degenerate configuration: all landmarks coincide")
    return Configuration(out)


def uncenter(conf) -> np.ndarray:
    """Map a configuration back to a centered m x k landmark matrix."""
    e = _entries(conf)
    return e @ helmert_matrix(e.shape[1] + 1).T


def to_preshape(c) -> PreShape:
    """Project a configuration to the pre-shape sphere (divide by its norm)."""
    e = _entries(c)
    n = np.linalg.norm(e)
    if n <= 1e-300:
        raise ValueError("cannot normalize a zero configuration")
    return PreShape(e / n)


def align_stack(stack: np.ndarray, target: np.ndarray):
    """Optimal rotations of a stack of configurations onto one target.

    Parameters
    ----------
    stack : (n, m, q) array of configurations.
    target : (m, q) configuration.

    Returns
    -------
    g : (n, m, m) rotations maximizing <g x_i, target>.
    inner : (n,) the maximal inner products.

    The maximizer comes from the SVD of x_i target^T with the smallest
    singular direction sign-flipped whenever needed to stay in SO(m).
    """
    stack = np.asarray(stack, dtype=float)
    target = np.asarray(target, dtype=float)
    M = stack @ target.T
    U, S, Vt = np.linalg.svd(M)
    sign = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0.0, -1.0, 1.0)
    inner = S[..., :-1].sum(axis=-1) + sign * S[..., -1]
    Ut = np.swapaxes(U, -1, -2).copy()
    Ut[..., -1, :] *= sign[..., None]
    g = np.swapaxes(Vt, -1, -2) @ Ut
    return g, inner


def optimal_rotation(x, y):
    """Rotation g maximizing <g x, y> over SO(m), and the achieved value.

    Returns (Rotation, aligned_inner).  Raises on dimension mismatch.
    """
    xe, ye = _entries(x), _entries(y)
    if xe.shape != ye.shape:
        raise ValueError(f"dimension mismatch: {xe.shape} vs {ye.shape}")
    g, inner = align_stack(xe[None], ye)
    return Rotation(g[0]), float(inner[0])


def aligned_inner(x, y) -> float:
    """max over SO(m) of <g x, y>."""
    xe, ye = _entries(x), _entries(y)
    if xe.shape != ye.shape:
        raise ValueError(f"dimension mismatch: {xe.shape} vs {ye.shape}")
    _, inner = align_stack(xe[None], ye)
    return float(inner[0])


# -- the four quotient distances ------------------------------------------
#
# All four are functions of the optimally aligned residual; computing the
# residual norm directly (instead of sqrt(2 - 2 c) from the aligned inner
# product c) avoids cancellation and keeps full accuracy near zero.

def _aligned_chord(a, b) -> float:
    """min over rotations of ||g a_unit - b_unit||."""
    ae, be = _entries(a), _entries(b)
    if ae.shape != be.shape:
        raise ValueError(f"dimension mismatch: {ae.shape} vs {be.shape}")
    ae = ae / np.linalg.norm(ae)
    be = be / np.linalg.norm(be)
    g, _ = align_stack(ae[None], be)
    return float(np.linalg.norm(g[0] @ ae - be))


def dist_shape_intrinsic(a, b) -> float:
    """Arc-length distance on the shape space."""
    h = min(_aligned_chord(a, b) / 2.0, 1.0)
    return float(2.0 * np.arcsin(h))


def dist_shape_procrustes(a, b) -> float:
    """Full Procrustes (residual) distance, sin of the intrinsic one.

    When no rotation achieves a nonnegative inner product the optimal
    residual scale is zero and the distance saturates at 1.
    """
    h = min(_aligned_chord(a, b) / 2.0, 1.0)
    if h >= np.sqrt(0.5):  # aligned inner product <= 0
        return 1.0
    return float(2.0 * h * np.sqrt(1.0 - h * h))


def dist_shape_ziezold(a, b) -> float:
    """Chordal quotient distance, 2 sin(intrinsic / 2)."""
    return _aligned_chord(a, b)


def dist_sizeshape(a, b) -> float:
    """Rotation-aligned Euclidean distance on the size-and-shape space."""
    ae, be = _entries(a), _entries(b)
    if ae.shape != be.shape:
        raise ValueError(f"dimension mismatch: {ae.shape} vs {be.shape}")
    g, _ = align_stack(ae[None], be)
    return float(np.linalg.norm(g[0] @ ae - be))
