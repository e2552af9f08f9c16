"""Elliptical-like frusta, the cylinder geodesic and bootstrap bands.

A unit-height frustum is built from two ring-direction vectors a, b that are
orthogonal to each other and to the constant vector: the bottom ring has
semi-axes (r, r alpha), the top ring (r t, r beta t) at height one.  With
shared a, b these configurations span a totally geodesic submanifold of
shape space; cylinders (alpha = beta = t = 1) trace out a segment of a
single geodesic, so the distance of any shape to "the space of cylinders"
is a one-dimensional minimization along that great circle.

The bootstrap band machinery resamples small per-age samples of shapes,
recomputes the Procrustes mean distance to the cylinder geodesic and
reports percentile confidence bands, mirroring growth-curve analyses of
tree-stem cross sections.  Because the original ring data of that study are
not published, ``synthetic_stand`` generates stands whose tapering and
ellipticality ranges match the reported quantiles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .geometry import (
    PreShape,
    ShapePoint,
    _entries,
    align_stack,
    helmert_matrix,
    optimal_rotation,
    to_preshape,
)
from .means import MeanConfig, Rho, solve_stack


def default_rings(kappa: int):
    """Cosine/sine rings at kappa equally spaced angles."""
    if kappa < 3:
        raise ValueError("need at least 3 angles per ring")
    ang = 2.0 * np.pi * np.arange(1, kappa + 1) / kappa
    return np.cos(ang), np.sin(ang)


@dataclass(frozen=True, eq=False)
class FrustumParams:
    """Parameters of an elliptical-like unit-height frustum.

    ``alpha``/``beta`` are bottom/top ellipticality ratios, ``r`` the mean
    bottom radius and ``t`` the tapering.  The ring vectors must satisfy
    <a, b> = <a, 1> = <b, 1> = 0; the defaults are the cosine/sine rings.
    """

    kappa: int = 36
    alpha: float = 1.0
    beta: float = 1.0
    r: float = 1.0
    t: float = 1.0
    a_vec: np.ndarray | None = None
    b_vec: np.ndarray | None = None

    def __post_init__(self):
        if self.kappa < 3:
            raise ValueError("need at least 3 angles per ring")
        for name in ("alpha", "beta", "r", "t"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        a, b = self.a_vec, self.b_vec
        if a is None or b is None:
            a, b = default_rings(self.kappa)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (self.kappa,) or b.shape != (self.kappa,):
            raise ValueError("ring vectors must have length kappa")
        ones = np.ones(self.kappa)
        scale = max(np.linalg.norm(a) * np.linalg.norm(b), 1.0)
        if max(abs(a @ b), abs(a @ ones), abs(b @ ones)) > 1e-10 * scale:
            raise ValueError("ring vectors must be orthogonal to each other and to 1")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a_vec", a)
        object.__setattr__(self, "b_vec", b)

    @property
    def semi_axes(self) -> tuple:
        """(bottom a-axis, bottom b-axis, top a-axis, top b-axis)."""
        return (self.r, self.r * self.alpha, self.r * self.t, self.r * self.beta * self.t)


def frustum_raw(p: FrustumParams) -> np.ndarray:
    """Raw 3 x 2 kappa landmark matrix (bottom ring columns, then top ring)."""
    w = np.zeros((3, 2 * p.kappa))
    w[0, : p.kappa] = p.r * p.a_vec
    w[0, p.kappa:] = p.r * p.t * p.a_vec
    w[1, : p.kappa] = p.r * p.alpha * p.b_vec
    w[1, p.kappa:] = p.r * p.beta * p.t * p.b_vec
    w[2, p.kappa:] = 1.0
    return w


def frustum_size(p: FrustumParams) -> float:
    """Frobenius norm of the centered frustum configuration."""
    a2 = float(p.a_vec @ p.a_vec)
    b2 = float(p.b_vec @ p.b_vec)
    A1, A2, A3, A4 = p.semi_axes
    return float(np.sqrt((A1**2 + A3**2) * a2 + (A2**2 + A4**2) * b2 + p.kappa / 2.0))


def frustum_config(p: FrustumParams) -> PreShape:
    """Pre-shape of the frustum (Helmertized and scaled to unit norm)."""
    x = frustum_raw(p) @ helmert_matrix(2 * p.kappa)
    return to_preshape(x)


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    """Great-circle segment through two pre-shapes stored in optimal position."""

    p0: PreShape
    p1: PreShape
    angle: float = None  # type: ignore[assignment]

    def __post_init__(self):
        g, inner = optimal_rotation(self.p1, self.p0)
        if np.abs(g.entries - np.eye(self.p0.m)).max() > 1e-8:
            raise ValueError("endpoints must be stored in optimal position")
        ang = float(np.arccos(np.clip(inner, -1.0, 1.0)))
        if self.angle is None:
            object.__setattr__(self, "angle", ang)
        elif abs(self.angle - ang) > 1e-8:
            raise ValueError("stored angle inconsistent with endpoints")
        if not 0.0 < self.angle < np.pi:
            raise ValueError("endpoints must be distinct and non-antipodal")
        # unit tangent at p0 toward p1
        normal = self.p1.entries - np.cos(self.angle) * self.p0.entries
        object.__setattr__(self, "_normal", normal / np.linalg.norm(normal))

    def point(self, s: float) -> np.ndarray:
        """Representative of the great-circle point at arc length s from p0."""
        return np.cos(s) * self.p0.entries + np.sin(s) * self._normal


def cylinder_geodesic(kappa: int, r0: float, r1: float) -> GeodesicSegment:
    """Geodesic segment spanned by the shapes of two cylinders.

    Cylinder pre-shapes with shared rings are automatically in mutual
    optimal position, so the segment parameterizes every cylinder shape.
    """
    if not 0 < r0 < r1:
        raise ValueError("need radii 0 < r0 < r1")
    p0 = frustum_config(FrustumParams(kappa=kappa, r=r0))
    p1 = frustum_config(FrustumParams(kappa=kappa, r=r1))
    g, _ = optimal_rotation(p1, p0)
    return GeodesicSegment(p0=p0, p1=PreShape(g.entries @ p1.entries))


_METRICS = ("intrinsic", "procrustes", "ziezold")


def _dists_along(x: np.ndarray, seg: GeodesicSegment, s: np.ndarray, metric: str) -> np.ndarray:
    """Distances of pre-shape x to gamma(s) for a whole array of s at once.

    x gamma(s)^T = cos(s) M0 + sin(s) M1 with fixed m x m matrices, so the
    rotation alignment for every s costs one batched SVD.  Accuracy near
    zero is limited to ~1e-8 by the aligned inner product; the scalar
    evaluation below is used wherever full accuracy matters.
    """
    M0 = x @ seg.p0.entries.T
    M1 = x @ seg._normal.T
    M = np.cos(s)[:, None, None] * M0[None] + np.sin(s)[:, None, None] * M1[None]
    U, S, Vt = np.linalg.svd(M)
    sign = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0.0, -1.0, 1.0)
    c = np.clip(S[:, :-1].sum(axis=1) + sign * S[:, -1], -1.0, 1.0)
    if metric == "intrinsic":
        return np.arccos(c)
    if metric == "procrustes":
        return np.sqrt(np.maximum(0.0, 1.0 - np.maximum(c, 0.0) ** 2))
    return np.sqrt(np.maximum(0.0, 2.0 * (1.0 - c)))


def _dist_at(x: np.ndarray, seg: GeodesicSegment, s: float, metric: str) -> float:
    """Accurate scalar distance to gamma(s) via the aligned residual."""
    p = seg.point(s)
    g, _ = align_stack(x[None], p)
    h = min(np.linalg.norm(g[0] @ x - p) / 2.0, 1.0)
    if metric == "intrinsic":
        return float(2.0 * np.arcsin(h))
    if metric == "procrustes":
        if h >= np.sqrt(0.5):
            return 1.0
        return float(2.0 * h * np.sqrt(1.0 - h * h))
    return float(2.0 * h)


def distance_to_geodesic(x, seg: GeodesicSegment, metric: str = "intrinsic",
                         grid: int = 128, xtol: float = 1e-10):
    """Distance of a shape to the full great circle of a segment.

    Coarse search on ``grid`` equally spaced circle points, then
    golden-section refinement of the bracketing interval down to ``xtol``
    in the arc-length parameter.  Returns (distance, foot-point parameter).
    """
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {_METRICS}")
    xe = _entries(x)
    xe = xe / np.linalg.norm(xe)
    ss = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
    vals = _dists_along(xe, seg, ss, metric)
    i = int(np.argmin(vals))
    step = 2.0 * np.pi / grid
    lo, hi = ss[i] - step, ss[i] + step

    def f(s):
        return _dist_at(xe, seg, s, metric)

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > xtol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    s_star = float((lo + hi) / 2.0 % (2.0 * np.pi))
    return f(s_star), s_star


class GrowthMode(enum.Enum):
    UNIFORM_INCREMENT = "uniform-increment"
    CONSTANT_SHAPE_RATIOS = "constant-shape-ratios"


def _params_from_axes(p: FrustumParams, axes) -> FrustumParams:
    A1, A2, A3, A4 = axes
    return FrustumParams(kappa=p.kappa, r=A1, alpha=A2 / A1, t=A3 / A1,
                         beta=A4 / A3, a_vec=p.a_vec, b_vec=p.b_vec)


def growth_curve(mode: GrowthMode, start: FrustumParams, size_schedule,
                 steps: int) -> list[FrustumParams]:
    """Frustum sequence growing along a size schedule.

    UNIFORM_INCREMENT adds one common increment to all four semi-axes per
    step (chosen so the configuration size matches the schedule), which
    drives ellipticality and tapering toward one.  CONSTANT_SHAPE_RATIOS
    keeps (alpha, beta, t) fixed and rescales the radius; height stays one,
    so the shape still moves.
    """
    schedule = [float(s) for s in size_schedule]
    if len(schedule) != steps:
        raise ValueError("schedule length must equal steps")
    if any(s <= 0 for s in schedule) or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("size schedule must be positive and strictly increasing")
    a2 = float(start.a_vec @ start.a_vec)
    b2 = float(start.b_vec @ start.b_vec)
    h = start.kappa / 2.0
    out: list[FrustumParams] = []
    cur = start
    for target in schedule:
        if target**2 <= h:
            raise ValueError("schedule size below the height-only size is unreachable")
        if mode is GrowthMode.CONSTANT_SHAPE_RATIOS:
            C = a2 * (1.0 + cur.t**2) + b2 * (cur.alpha**2 + (cur.beta * cur.t) ** 2)
            r_new = float(np.sqrt((target**2 - h) / C))
            cur = FrustumParams(kappa=cur.kappa, r=r_new, alpha=cur.alpha,
                                beta=cur.beta, t=cur.t, a_vec=cur.a_vec, b_vec=cur.b_vec)
        else:
            A = np.array(cur.semi_axes)
            w = np.array([a2, b2, a2, b2])
            qa = float(w.sum())
            qb = 2.0 * float(w @ A)
            qc = float(w @ A**2) - (target**2 - h)
            disc = qb**2 - 4.0 * qa * qc
            if disc < 0:
                raise ValueError("no increment reaches the scheduled size")
            u = (-qb + np.sqrt(disc)) / (2.0 * qa)
            axes = A + u
            if np.any(axes <= 0):
                raise ValueError("increment would collapse a semi-axis")
            cur = _params_from_axes(cur, axes)
        out.append(cur)
    return out


@dataclass
class BootstrapBand:
    """Percentile confidence band of the mean distance to a geodesic."""

    ages: list
    estimates: np.ndarray
    lowers: np.ndarray
    uppers: np.ndarray
    B: int
    level: float
    n_failures: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("need at least 2 resamples")
        if np.any(self.lowers > self.uppers + 1e-15):
            raise ValueError("band bounds out of order")


def bootstrap_band(samples_per_time, B: int, level: float, seg: GeodesicSegment,
                   seed: int = 0, rho: Rho = Rho.FULL_PROCRUSTES,
                   metric: str = "intrinsic", ages=None,
                   cfg: MeanConfig | None = None) -> BootstrapBand:
    """Bootstrap the per-time mean shape distance to a geodesic.

    For each time point, B resamples with replacement are drawn from the
    streams (seed, time, resample); the band is the empirical
    (1-level)/2 and 1-(1-level)/2 percentile of the resampled mean
    distances, the point estimate comes from the original sample.  More
    than 5 percent solver failures abort the run.
    """
    if B < 50:
        raise ValueError("need at least 50 resamples for a percentile band")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if rho is Rho.PARTIAL_PROCRUSTES:
        raise ValueError("the band compares shapes; use full or ziezold means")
    cfg = cfg or MeanConfig()
    stacks = []
    for t, shapes in enumerate(samples_per_time):
        if len(shapes) < 2:
            raise ValueError(f"time point {t}: need at least 2 shapes")
        stacks.append(np.stack([_entries(s) for s in shapes]))
    ages = list(ages) if ages is not None else list(range(len(stacks)))
    lo_q = 100.0 * (1.0 - level) / 2.0
    hi_q = 100.0 - lo_q
    estimates = np.empty(len(stacks))
    lowers = np.empty(len(stacks))
    uppers = np.empty(len(stacks))
    failures = 0
    total = 0

    def mean_distance(stack):
        mu, _, _, converged, *_ = solve_stack(stack, cfg, rho)
        if not converged:
            return None
        return distance_to_geodesic(mu, seg, metric=metric)[0]

    for t, stack in enumerate(stacks):
        est = mean_distance(stack)
        if est is None:
            raise RuntimeError(f"time point {t}: mean of the original sample failed")
        estimates[t] = est
        n = len(stack)

        def one_resample(b):
            idx = streams.stream(seed, t, b).integers(0, n, n)
            return mean_distance(stack[idx])

        dists = streams.parallel_map(one_resample, range(B))
        ok = [d for d in dists if d is not None]
        failures += B - len(ok)
        total += B
        if B - len(ok) > 0.05 * B:
            raise RuntimeError(f"time point {t}: more than 5% resample means failed")
        lowers[t] = np.percentile(ok, lo_q)
        uppers[t] = np.percentile(ok, hi_q)
    return BootstrapBand(
        ages=ages, estimates=estimates, lowers=lowers, uppers=uppers, B=B,
        level=level, n_failures=failures,
        metadata={"rho": rho.value, "metric": metric, "seed": seed},
    )


class StandScenario(enum.Enum):
    TOWARD_THEN_AWAY = "toward-then-away"
    CONSTANT_RATIOS = "constant-ratios"


@dataclass
class SyntheticStand:
    """Generated per-age frustum samples with their parameters."""

    ages: list
    shapes: list  # list (per age) of lists of ShapePoint
    params: list  # list (per age) of lists of FrustumParams
    scenario: StandScenario
    metadata: dict = field(default_factory=dict)


# Trajectory endpoints tuned so that the pooled 2.5/97.5 percent quantiles of
# tapering fall inside [0.864, 0.986] and of ellipticality inside [1.02, 1.13].
_T_PATH = (0.878, 0.972, 0.872)
_ALPHA_PATH = (1.112, 1.032, 1.118)
_T_NOISE = 0.004
_ALPHA_NOISE = 0.005


def synthetic_stand(ages: int, trees_per_age: int = 5,
                    scenario: StandScenario = StandScenario.TOWARD_THEN_AWAY,
                    seed: int = 0, kappa: int = 36,
                    change_point: float = 0.2) -> SyntheticStand:
    """Generate a synthetic stand of per-age frustum samples.

    TOWARD_THEN_AWAY moves ellipticality and tapering toward the cylinder
    values until ``change_point`` (as a fraction of the age span), then away
    again, while the radius grows; CONSTANT_RATIOS keeps the ratios fixed
    and only grows the radius.  A fixed seed reproduces the stand exactly.
    """
    if ages < 1 or trees_per_age < 1:
        raise ValueError("need at least one age and one tree per age")
    if not 0.0 < change_point < 1.0:
        raise ValueError("change_point must be in (0, 1)")
    age_list = list(range(1, ages + 1))
    shapes = []
    params = []
    for i in range(ages):
        f = i / max(ages - 1, 1)
        if scenario is StandScenario.TOWARD_THEN_AWAY:
            if f < change_point:
                p = f / change_point
                t_mid = _T_PATH[0] + (_T_PATH[1] - _T_PATH[0]) * p
                a_mid = _ALPHA_PATH[0] + (_ALPHA_PATH[1] - _ALPHA_PATH[0]) * p
            else:
                q = (f - change_point) / (1.0 - change_point)
                t_mid = _T_PATH[1] + (_T_PATH[2] - _T_PATH[1]) * q
                a_mid = _ALPHA_PATH[1] + (_ALPHA_PATH[2] - _ALPHA_PATH[1]) * q
        else:
            t_mid, a_mid = 0.93, 1.06
        r_mid = 0.55 + 1.75 * f
        rng = streams.stream(seed, i)
        age_params = []
        age_shapes = []
        for _ in range(trees_per_age):
            t_j = t_mid + rng.normal(0.0, _T_NOISE)
            a_j = a_mid + rng.normal(0.0, _ALPHA_NOISE)
            b_j = a_j + rng.normal(0.0, _ALPHA_NOISE / 2.0)
            r_j = r_mid * float(np.exp(rng.normal(0.0, 0.03)))
            p = FrustumParams(kappa=kappa, alpha=a_j, beta=max(b_j, 1.0), r=r_j, t=t_j)
            age_params.append(p)
            age_shapes.append(ShapePoint(frustum_config(p)))
        params.append(age_params)
        shapes.append(age_shapes)
    meta = {
        "scenario": scenario.value,
        "change_point": change_point,
        "trees_per_age": trees_per_age,
        "ages": ages,
        "kappa": kappa,
        "seed": seed,
        "tapering_range": (0.864, 0.986),
        "ellipticality_range": (1.02, 1.13),
    }
    return SyntheticStand(ages=age_list, shapes=shapes, params=params,
                          scenario=scenario, metadata=meta)
