"""Bernstein/Bezier/B-spline evaluation and the regulated control-point
scheme that guarantees smooth, non-intersecting thickness distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    IndexOutOfRange,
    InvalidKnots,
    LengthMismatch,
    NonMonotoneX,
    ZeroTangent,
)
from .geometry import GeometricFeatures, cosine_grid

# Reference layout shared by both branches: 12 control points, cubic.
N_CONTROL = 12
DEGREE = 3

THICKNESS_FREE = 2 * N_CONTROL - 3  # 21
CAMBER_FREE = 2 * N_CONTROL - 2     # 22


# ---------------------------------------------------------------------------
# Bernstein / Bezier
# ---------------------------------------------------------------------------

def bernstein(i: int, n: int, u):
    """Bernstein polynomial C(n,i) * u^i * (1-u)^(n-i)."""
    if not 0 <= i <= n:
        raise IndexOutOfRange(f"bernstein index {i} outside 0..{n}")
    u = np.asarray(u, dtype=float)
    return math.comb(n, i) * u**i * (1.0 - u) ** (n - i)


def bezier_eval(control_points, u):
    """Weighted Bernstein sum over the control points; u in [0, 1]."""
    pts = np.asarray(control_points, dtype=float)
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 control points")
    n = pts.shape[0] - 1
    u = np.atleast_1d(np.asarray(u, dtype=float))
    basis = np.stack([bernstein(i, n, u) for i in range(n + 1)], axis=-1)
    return basis @ pts


# ---------------------------------------------------------------------------
# B-spline basis
# ---------------------------------------------------------------------------

def clamped_uniform_knots(n_control: int, degree: int) -> np.ndarray:
    """Clamped knot vector with equispaced internal knots."""
    m = n_control - degree - 1
    if m < 0:
        raise InvalidKnots("degree too high for control point count")
    internal = np.arange(1, m + 1) / (m + 1)
    return np.concatenate([np.zeros(degree + 1), internal, np.ones(degree + 1)])


def _check_knots(knots: np.ndarray):
    if np.any(np.diff(knots) < 0):
        raise InvalidKnots("knots must be non-decreasing")


def bspline_basis(i: int, p: int, u: float, knots) -> float:
    """Cox-de Boor recursion with the 0/0 := 0 convention.

    At the final knot the basis is evaluated by left-limit so a clamped
    curve interpolates its last control point.
    """
    knots = np.asarray(knots, dtype=float)
    _check_knots(knots)
    if not 0 <= i < len(knots) - p - 1:
        raise IndexOutOfRange(f"basis index {i} invalid for this knot vector")
    return _cox_de_boor(i, p, float(u), knots)


def _cox_de_boor(i: int, p: int, u: float, knots: np.ndarray) -> float:
    if p == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        # left-limit at the right end of the knot range
        if u == knots[-1] and knots[i] < knots[i + 1] == knots[-1]:
            return 1.0
        return 0.0
    left_den = knots[i + p] - knots[i]
    right_den = knots[i + p + 1] - knots[i + 1]
    left = 0.0 if left_den == 0 else (u - knots[i]) / left_den * _cox_de_boor(i, p - 1, u, knots)
    right = 0.0 if right_den == 0 else (knots[i + p + 1] - u) / right_den * _cox_de_boor(i + 1, p - 1, u, knots)
    return left + right


def basis_bands(u, p: int, knots: np.ndarray, derivative: bool = False):
    """Vectorized basis evaluation returning only the p+1 non-zero values.

    Returns (span, bands) or, with derivative=True, (span, bands, dbands):
    for point m, bands[m, k] is the basis value of control index
    span[m] - p + k.  Requires distinct internal knots (true for every knot
    vector this package constructs).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    knots = np.asarray(knots, dtype=float)
    n_cp = len(knots) - p - 1
    span = np.searchsorted(knots, u, side="right") - 1
    span = np.clip(span, p, n_cp - 1)
    m = u.size
    bands = np.zeros((m, p + 1))
    bands[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    lower = None
    for j in range(1, p + 1):
        if derivative and j == p:
            lower = bands[:, :p].copy()
        left[:, j] = u - knots[span + 1 - j]
        right[:, j] = knots[span + j] - u
        saved = np.zeros(m)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            safe = np.where(den == 0.0, 1.0, den)
            temp = np.where(den == 0.0, 0.0, bands[:, r] / safe)
            bands[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        bands[:, j] = saved
    if not derivative:
        return span, bands
    if p == 0:
        return span, bands, np.zeros((m, 1))
    # N'_{i,p} from the degree p-1 triangle already computed above
    dbands = np.zeros((m, p + 1))
    for r in range(p + 1):
        i = span - p + r
        if r >= 1:
            den = knots[i + p] - knots[i]
            dbands[:, r] += np.where(den > 0, lower[:, r - 1] / np.where(den > 0, den, 1.0), 0.0)
        if r <= p - 1:
            den = knots[i + p + 1] - knots[i + 1]
            dbands[:, r] -= np.where(den > 0, lower[:, r] / np.where(den > 0, den, 1.0), 0.0)
    return span, bands, p * dbands


def basis_matrix(u, p: int, knots: np.ndarray) -> np.ndarray:
    """Dense (len(u), n_control) matrix of basis values."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    knots = np.asarray(knots, dtype=float)
    n_cp = len(knots) - p - 1
    span, bands = basis_bands(u, p, knots)
    out = np.zeros((u.size, n_cp))
    rows = np.arange(u.size)[:, None]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    out[rows, cols] = bands
    return out


# ---------------------------------------------------------------------------
# B-spline curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BSplineSpec:
    """Clamped B-spline curve: degree, (N, 2) control points, knot vector."""

    degree: int
    control_points: np.ndarray
    knots: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=float)
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "control_points", pts)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if len(knots) != len(pts) + p + 1:
            raise InvalidKnots("len(knots) must equal len(control_points) + degree + 1")
        _check_knots(knots)
        if np.any(knots[: p + 1] != knots[0]) or np.any(knots[-(p + 1):] != knots[-1]):
            raise InvalidKnots("knot vector must be clamped")

    @property
    def n_control(self) -> int:
        return self.control_points.shape[0]


@dataclass(frozen=True)
class CurveSamples:
    u: np.ndarray
    points: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


def derive_spec(spec: BSplineSpec) -> BSplineSpec:
    """Derivative curve via the standard derivative-control-point construction."""
    p = spec.degree
    pts = spec.control_points
    knots = spec.knots
    den = knots[p + 1 : p + len(pts)] - knots[1 : len(pts)]
    safe = np.where(den == 0.0, 1.0, den)
    q = p * (pts[1:] - pts[:-1]) / safe[:, None]
    q[den == 0.0] = 0.0
    return BSplineSpec(degree=p - 1, control_points=q, knots=knots[1:-1])


def bspline_eval(spec: BSplineSpec, u_values, derivatives: int = 0) -> CurveSamples:
    """Evaluate curve points and, on request, first/second derivatives."""
    u = np.atleast_1d(np.asarray(u_values, dtype=float))
    pts = basis_matrix(u, spec.degree, spec.knots) @ spec.control_points
    d1 = d2 = None
    if derivatives >= 1:
        dspec = derive_spec(spec)
        d1 = basis_matrix(u, dspec.degree, dspec.knots) @ dspec.control_points
        if derivatives >= 2:
            d2spec = derive_spec(dspec)
            d2 = basis_matrix(u, d2spec.degree, d2spec.knots) @ d2spec.control_points
    return CurveSamples(u=u, points=pts, d1=d1, d2=d2)


# ---------------------------------------------------------------------------
# Regulated control nets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegulatedControlNet:
    """Constrained control net for one distribution (thickness or camber).

    Free-variable layout (both kinds): the first N-1 slots are x-gap
    magnitudes, the rest are y-values for control points 2..N (camber) or
    2..N-1 (thickness).  Slots that correspond to pinned coordinates (the
    leading gap for thickness, where x2 = 0, and the trailing-edge y for
    camber, where yN = 0) are accepted but inert, which keeps the vector
    lengths at 2N-3 / 2N-2.
    """

    kind: str
    free_vars: np.ndarray
    control_points: np.ndarray
    degree: int = DEGREE

    @property
    def n_control(self) -> int:
        return self.control_points.shape[0]

    def spec(self) -> BSplineSpec:
        return BSplineSpec(
            degree=self.degree,
            control_points=self.control_points,
            knots=clamped_uniform_knots(self.n_control, self.degree),
        )


def free_var_count(kind: str, n_control: int = N_CONTROL) -> int:
    if kind == "thickness":
        return 2 * n_control - 3
    if kind == "camber":
        return 2 * n_control - 2
    raise ValueError(f"unknown net kind: {kind!r}")


def _cumulative_positions(raw: np.ndarray) -> np.ndarray:
    """|raw| gap magnitudes -> cumulative positions ending exactly at 1.

    Degenerate all-zero gaps fall back to a uniform spread so the curve
    stays well defined."""
    deltas = np.abs(raw)
    cum = np.cumsum(deltas)
    if cum[-1] < 1e-300:
        return np.arange(1, raw.size + 1) / raw.size
    return cum / cum[-1]


def realize_control_net(kind: str, free_vars, n_control: int = N_CONTROL) -> RegulatedControlNet:
    """Map an unconstrained free vector onto a valid control net.

    x-coordinates come from non-negative gap magnitudes normalized to unit
    sum (the trailing edge lands on x = 1 exactly); thickness y-values pass
    through an absolute value so the whole curve stays non-negative.
    """
    v = np.asarray(free_vars, dtype=float).ravel()
    expected = free_var_count(kind, n_control)
    if v.size != expected:
        raise LengthMismatch(f"{kind} net expects {expected} free variables, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("free variables must be finite")
    n = n_control
    gaps = v[: n - 1]
    ys = v[n - 1 :]
    x = np.zeros(n)
    y = np.zeros(n)
    if kind == "thickness":
        # x1 = x2 = 0; the remaining gaps span x2..xN
        x[2:] = _cumulative_positions(gaps[1:])
        y[1 : n - 1] = np.abs(ys)
    else:
        x[1:] = _cumulative_positions(gaps)
        y[1 : n - 1] = ys[: n - 2]  # trailing-edge slot inert, yN = 0
    pts = np.stack([x, y], axis=1)
    return RegulatedControlNet(kind=kind, free_vars=v, control_points=pts)


def net_free_vars(kind: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse of realize_control_net for already-valid coordinates."""
    gaps = np.diff(x)
    if kind == "thickness":
        return np.concatenate([gaps, y[1:-1]])
    return np.concatenate([gaps, y[1:]])


# ---------------------------------------------------------------------------
# Parametric-to-grid resampling
# ---------------------------------------------------------------------------

_SEED_DENSITY = 128  # intervals in the bracketing scan
_seed_cache: dict = {}


def _seed_tables(p: int, knots: np.ndarray):
    """Cosine-clustered scan locations (dense near the vertical-tangent ends)
    and their basis matrix, cached per knot vector."""
    key = (p, knots.tobytes())
    if key not in _seed_cache:
        u_seed = (1.0 - np.cos(np.pi * np.arange(_SEED_DENSITY + 1) / _SEED_DENSITY)) / 2.0
        _seed_cache[key] = (u_seed, basis_matrix(u_seed, p, knots))
    return _seed_cache[key]


def invert_parametric_x(x_control: np.ndarray, degree: int, knots: np.ndarray,
                        targets: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Solve x(u) = target by bracketed Newton with bisection fallback.

    x_control may be (N,) for one curve or (B, N) for a batch; targets is
    shared across the batch.  Returns u with shape (B, len(targets)) or
    (len(targets),) matching the input rank.
    """
    xc = np.atleast_2d(np.asarray(x_control, dtype=float))
    targets = np.asarray(targets, dtype=float)
    b, n = xc.shape
    g = targets.size
    p = degree

    u_seed, seed_mat = _seed_tables(p, np.asarray(knots, dtype=float))
    x_dense = xc @ seed_mat.T  # (B, seed)
    lo = np.empty((b, g))
    hi = np.empty((b, g))
    w = np.empty((b, g))
    for row in range(b):
        j = np.clip(np.searchsorted(x_dense[row], targets, side="right") - 1, 0, _SEED_DENSITY - 1)
        lo[row] = u_seed[j]
        hi[row] = u_seed[j + 1]
        gap = x_dense[row, j + 1] - x_dense[row, j]
        w[row] = np.where(gap > 0, (targets - x_dense[row, j]) / np.where(gap > 0, gap, 1.0), 0.5)

    rows = np.repeat(np.arange(b), g)
    tgt = np.tile(targets, b)
    lo, hi = lo.ravel(), hi.ravel()
    u = lo + np.clip(w.ravel(), 0.0, 1.0) * (hi - lo)

    active = (tgt > 0.0) & (tgt < 1.0)
    u[tgt <= 0.0] = 0.0
    u[tgt >= 1.0] = 1.0
    offsets = np.arange(p + 1)[None, :]

    for it in range(120):
        if not np.any(active):
            break
        ua, ra, ta = u[active], rows[active], tgt[active]
        span, bands, dbands = basis_bands(ua, p, knots, derivative=True)
        cols = span[:, None] - p + offsets
        ctrl = xc[ra[:, None], cols]
        f = np.sum(bands * ctrl, axis=1) - ta
        dx = np.sum(dbands * ctrl, axis=1)

        la, ha = lo[active], hi[active]
        above = f > 0
        ha = np.where(above, ua, ha)
        la = np.where(above, la, ua)
        with np.errstate(divide="ignore", invalid="ignore"):
            u_newton = ua - f / dx
        # fall back to the midpoint whenever Newton leaves the bracket, and
        # force it periodically so the bracket provably shrinks
        bad = (~np.isfinite(u_newton)) | (u_newton <= la) | (u_newton >= ha) | (it % 4 == 3)
        u_next = np.where(bad, 0.5 * (la + ha), u_newton)

        done = np.abs(f) < tol
        u_next = np.where(done, ua, u_next)
        lo[active], hi[active] = la, ha
        u[active] = u_next
        still = ~done
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not np.any(still):
            break
    else:
        raise NonMonotoneX("x(u) inversion failed to converge; curve is not invertible")

    out = u.reshape(b, g)
    return out if np.asarray(x_control).ndim == 2 else out[0]


def net_to_distribution(net: RegulatedControlNet, x_grid: np.ndarray | None = None) -> np.ndarray:
    """Sample the net's curve and re-interpolate onto the cosine x-grid."""
    if x_grid is None:
        x_grid = cosine_grid()
    spec = net.spec()
    u = invert_parametric_x(spec.control_points[:, 0], spec.degree, spec.knots, x_grid)
    span, bands = basis_bands(u, spec.degree, spec.knots)
    cols = span[:, None] - spec.degree + np.arange(spec.degree + 1)[None, :]
    values = np.sum(bands * spec.control_points[:, 1][cols], axis=1)
    return values


# ---------------------------------------------------------------------------
# Differentiable-by-construction geometric features of a net pair
# ---------------------------------------------------------------------------

FEATURE_DENSITY = 201


def curve_features(t_net: RegulatedControlNet, c_net: RegulatedControlNet,
                   n_dense: int = FEATURE_DENSITY) -> GeometricFeatures:
    """Features straight from the parametric curves.

    t_max/m_max are discrete maxima over a dense parametric sampling;
    gamma_te comes from the camber tangent at u = 1; r_le is the radius of
    curvature of the half-thickness curve at u = 0.  Every step has a
    (sub)differentiable torch twin in curve_layers, which the training loss
    uses.
    """
    u = np.linspace(0.0, 1.0, n_dense)
    t_samples = bspline_eval(t_net.spec(), u)
    c_samples = bspline_eval(c_net.spec(), u, derivatives=1)
    t_max = float(np.max(t_samples.points[:, 1]))
    m_max = float(np.max(c_samples.points[:, 1]))

    dte = c_samples.d1[-1]
    if dte[0] ** 2 + dte[1] ** 2 < 1e-24:
        raise ZeroTangent("camber tangent vanishes at the trailing edge")
    gamma_te = float(-np.arctan2(dte[1], dte[0]))

    half = bspline_eval(
        BSplineSpec(
            degree=t_net.degree,
            control_points=t_net.control_points * np.array([1.0, 0.5]),
            knots=t_net.spec().knots,
        ),
        np.array([0.0]),
        derivatives=2,
    )
    xp, yp = half.d1[0]
    xpp, ypp = half.d2[0]
    speed_sq = xp**2 + yp**2
    if speed_sq < 1e-24:
        raise ZeroTangent("half-thickness tangent vanishes at the leading edge")
    kappa = abs(xp * ypp - yp * xpp) / speed_sq**1.5
    r_le = float(1.0 / kappa) if kappa > 0 else float("inf")
    return GeometricFeatures(m_max=m_max, gamma_te=gamma_te, t_max=t_max, r_le=r_le)


# ---------------------------------------------------------------------------
# Fitting helper (least squares in the regulated layout)
# ---------------------------------------------------------------------------

def fit_net_to_distribution(kind: str, values: np.ndarray, x_grid: np.ndarray | None = None,
                            n_control: int = N_CONTROL) -> RegulatedControlNet:
    """Least-squares fit of a regulated net to grid values.

    Control abscissae are fixed to a cosine-like spread; interior y-values
    are solved linearly (non-negative least squares for thickness).
    """
    from scipy.optimize import nnls

    if x_grid is None:
        x_grid = cosine_grid()
    values = np.asarray(values, dtype=float)
    n = n_control
    knots = clamped_uniform_knots(n, DEGREE)
    x = np.zeros(n)
    if kind == "thickness":
        # x2 pinned at 0, cosine spread beyond for leading-edge resolution
        k = np.arange(1, n - 1)
        x[2:] = (1.0 - np.cos(np.pi * k / (n - 2))) / 2.0
    else:
        # Greville abscissae give x(u) = u, so polynomial targets fit exactly
        for i in range(n):
            x[i] = np.mean(knots[i + 1 : i + 1 + DEGREE])
        x[0], x[-1] = 0.0, 1.0
    u = invert_parametric_x(x, DEGREE, knots, x_grid)
    mat = basis_matrix(u, DEGREE, knots)
    inner = mat[:, 1:-1]  # y1 = yN = 0
    if kind == "thickness":
        y_inner, _ = nnls(inner, values)
    else:
        y_inner, *_ = np.linalg.lstsq(inner, values, rcond=None)
    y = np.zeros(n)
    y[1:-1] = y_inner
    return realize_control_net(kind, net_free_vars(kind, x, y), n_control=n)
