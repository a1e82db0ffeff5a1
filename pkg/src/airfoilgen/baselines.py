"""Classical airfoil parameterizations behind a single decode interface,
with dataset-derived design-variable bounds for fair comparisons."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .curves import basis_matrix, invert_parametric_x
from .errors import FitFailure, RankDeficient, SingularSystem
from .geometry import AirfoilSection, cosine_grid, decompose, extract_features

BOUND_PERCENTILES = (0.3, 99.7)  # mirrors the latent-box convention

COND_WARN = 1e8
COND_FAIL = 1e12


class Parameterization:
    """decode(design_vector) -> AirfoilSection on the canonical grid."""

    name: str = "base"

    def __init__(self, n_dv: int, grid: np.ndarray | None = None):
        self.n_dv = n_dv
        self.grid = cosine_grid() if grid is None else grid
        self.bounds: np.ndarray | None = None  # (n_dv, 2)

    def decode(self, dv: np.ndarray) -> AirfoilSection:
        raise NotImplementedError

    def fit(self, section: AirfoilSection) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        if self.bounds is None:
            raise ValueError(f"{self.name}: bounds not derived yet")
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return rng.uniform(lo, hi, size=(n, self.n_dv))

    def label(self) -> str:
        return f"{self.name}-{self.n_dv}"


# ---------------------------------------------------------------------------
# PARSEC (12 variables)
# ---------------------------------------------------------------------------

# variable order for the 12-DV variant
PARSEC_VARS = (
    "r_le_up", "r_le_lo",
    "x_up", "y_up", "yxx_up",
    "x_lo", "y_lo", "yxx_lo",
    "y_te", "t_te", "alpha_te", "beta_te",
)

_POWERS = np.arange(1, 7) - 0.5  # exponents of the six polynomial terms


def _parsec_rows(x_crest: float):
    val = x_crest**_POWERS
    d1 = _POWERS * x_crest ** (_POWERS - 1)
    d2 = _POWERS * (_POWERS - 1) * x_crest ** (_POWERS - 2)
    return val, d1, d2


def _solve_surface(r_le: float, sign: float, x_c: float, y_c: float, yxx_c: float,
                   y_te_s: float, slope_te: float) -> np.ndarray:
    val, d1, d2 = _parsec_rows(x_c)
    m = np.stack([
        np.eye(6)[0],            # a1 from the LE radius
        np.ones(6),              # value at the TE
        val,                     # crest value
        d1,                      # crest slope = 0
        d2,                      # crest curvature
        _POWERS,                 # slope at the TE
    ])
    rhs = np.array([sign * np.sqrt(2.0 * r_le), y_te_s, y_c, 0.0, yxx_c, slope_te])
    cond = np.linalg.cond(m)
    if cond > COND_FAIL:
        raise SingularSystem(f"PARSEC system condition number {cond:.2e}")
    if cond > COND_WARN:
        warnings.warn(f"PARSEC system ill-conditioned (cond = {cond:.2e})", stacklevel=3)
    return np.linalg.solve(m, rhs)


def parsec_solve(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """12 PARSEC variables -> sixth-order polynomial coefficients (a_u, a_l)."""
    f = dict(zip(PARSEC_VARS, np.asarray(features, dtype=float)))
    if f["r_le_up"] < 0 or f["r_le_lo"] < 0:
        raise ValueError("leading-edge radii must be non-negative")
    a_u = _solve_surface(
        f["r_le_up"], +1.0, f["x_up"], f["y_up"], f["yxx_up"],
        f["y_te"] + f["t_te"] / 2.0, np.tan(f["alpha_te"] - f["beta_te"] / 2.0))
    a_l = _solve_surface(
        f["r_le_lo"], -1.0, f["x_lo"], f["y_lo"], f["yxx_lo"],
        f["y_te"] - f["t_te"] / 2.0, np.tan(f["alpha_te"] + f["beta_te"] / 2.0))
    return a_u, a_l


def parsec_eval(coefficients, x_grid: np.ndarray | None = None) -> AirfoilSection:
    a_u, a_l = coefficients
    x = cosine_grid() if x_grid is None else x_grid
    powers = x[:, None] ** _POWERS[None, :]
    return AirfoilSection(x=x, y_upper=powers @ a_u, y_lower=powers @ a_l)


def parsec_features_from_coeffs(a_u: np.ndarray, a_l: np.ndarray) -> np.ndarray:
    """Recover the 12 variables from coefficients (forward-evaluation oracle)."""

    def crest(a, want_max):
        # roots of x^0.5 * sum a_i (i-1/2) x^(i-1)
        poly = (a * _POWERS)[::-1]
        roots = np.roots(poly)
        real = roots[np.abs(roots.imag) < 1e-9].real
        real = real[(real > 1e-4) & (real < 1.0)]
        if real.size == 0:
            raise FitFailure("no interior crest found")
        vals = np.array([np.sum(a * x**_POWERS) for x in real])
        x_c = real[np.argmax(vals)] if want_max else real[np.argmin(vals)]
        y_c = float(np.sum(a * x_c**_POWERS))
        yxx = float(np.sum(a * _POWERS * (_POWERS - 1) * x_c ** (_POWERS - 2)))
        return x_c, y_c, yxx

    x_up, y_up, yxx_up = crest(a_u, want_max=True)
    x_lo, y_lo, yxx_lo = crest(a_l, want_max=False)
    yu1, yl1 = float(np.sum(a_u)), float(np.sum(a_l))
    su = float(np.sum(a_u * _POWERS))
    sl = float(np.sum(a_l * _POWERS))
    alpha = 0.5 * (np.arctan(su) + np.arctan(sl))
    beta = np.arctan(sl) - np.arctan(su)
    return np.array([
        a_u[0] ** 2 / 2.0, a_l[0] ** 2 / 2.0,
        x_up, y_up, yxx_up, x_lo, y_lo, yxx_lo,
        (yu1 + yl1) / 2.0, yu1 - yl1, alpha, beta,
    ])


class ParsecParameterization(Parameterization):
    name = "parsec"

    def __init__(self, grid=None):
        super().__init__(n_dv=12, grid=grid)

    def decode(self, dv):
        return parsec_eval(parsec_solve(dv), self.grid)

    def fit(self, section: AirfoilSection) -> np.ndarray:
        x = section.x
        yu, yl = section.y_upper, section.y_lower

        def surface_vars(y):
            r_le = y[1] ** 2 / (2.0 * x[1])
            i_c = int(np.argmax(np.abs(y[2:-2]))) + 2
            sl = np.polyfit(x[i_c - 2 : i_c + 3], y[i_c - 2 : i_c + 3], 2)
            return r_le, x[i_c], y[i_c], 2.0 * sl[0]

        r_up, x_up, y_up, yxx_up = surface_vars(yu)
        r_lo, x_lo, y_lo, yxx_lo = surface_vars(yl)
        n = x.size
        su = (yu[n - 1] - yu[n - 3]) / (x[n - 1] - x[n - 3])
        sl_ = (yl[n - 1] - yl[n - 3]) / (x[n - 1] - x[n - 3])
        alpha = 0.5 * (np.arctan(su) + np.arctan(sl_))
        beta = np.arctan(sl_) - np.arctan(su)
        return np.array([
            r_up, r_lo, x_up, y_up, yxx_up, x_lo, y_lo, yxx_lo,
            yu[-1] / 2 + yl[-1] / 2, yu[-1] - yl[-1], alpha, beta,
        ])


# ---------------------------------------------------------------------------
# CST
# ---------------------------------------------------------------------------

class CstParameterization(Parameterization):
    """Class function x^0.5 (1-x) scaled by a Bernstein shape function.

    First half of the design vector drives the upper surface, second half
    the lower; lower-surface coefficients are typically negative."""

    name = "cst"

    def __init__(self, n_dv: int = 10, grid=None):
        if n_dv % 2:
            raise ValueError("CST needs an even design-variable count")
        super().__init__(n_dv=n_dv, grid=grid)
        self.order = n_dv // 2 - 1
        x = self.grid
        self._class = np.sqrt(x) * (1.0 - x)
        from .curves import bernstein

        self._shape_basis = np.stack(
            [bernstein(i, self.order, x) for i in range(self.order + 1)], axis=1
        )
        self._design_matrix = self._class[:, None] * self._shape_basis

    def decode(self, dv):
        dv = np.asarray(dv, dtype=float)
        half = self.n_dv // 2
        return AirfoilSection(
            x=self.grid,
            y_upper=self._design_matrix @ dv[:half],
            y_lower=self._design_matrix @ dv[half:],
        )

    def fit(self, section: AirfoilSection) -> np.ndarray:
        a_u, *_ = np.linalg.lstsq(self._design_matrix, section.y_upper, rcond=None)
        a_l, *_ = np.linalg.lstsq(self._design_matrix, section.y_lower, rcond=None)
        return np.concatenate([a_u, a_l])


# ---------------------------------------------------------------------------
# Bezier (fixed abscissae, free surface heights)
# ---------------------------------------------------------------------------

BEZIER_ABSCISSAE = (0.0, 0.15, 0.4, 0.7, 1.0)


class BezierParameterization(Parameterization):
    """Per surface: 7 control points of degree 6; the five free y-values sit
    at fixed x stations and the curve endpoints are pinned to (0,0)/(1,0)."""

    name = "bezier"

    def __init__(self, grid=None):
        super().__init__(n_dv=10, grid=grid)
        free_x = np.asarray(BEZIER_ABSCISSAE)
        self._ctrl_x = np.concatenate([[0.0], free_x, [1.0]])
        n = self._ctrl_x.size - 1
        self._knots = np.concatenate([np.zeros(n + 1), np.ones(n + 1)])
        self._degree = n
        # x(u) is shared by every decode: invert once
        u = invert_parametric_x(self._ctrl_x, n, self._knots, self.grid)
        self._y_matrix = basis_matrix(u, n, self._knots)[:, 1:-1]

    def decode(self, dv):
        dv = np.asarray(dv, dtype=float)
        return AirfoilSection(
            x=self.grid,
            y_upper=self._y_matrix @ dv[:5],
            y_lower=self._y_matrix @ dv[5:],
        )

    def fit(self, section: AirfoilSection) -> np.ndarray:
        a_u, *_ = np.linalg.lstsq(self._y_matrix, section.y_upper, rcond=None)
        a_l, *_ = np.linalg.lstsq(self._y_matrix, section.y_lower, rcond=None)
        return np.concatenate([a_u, a_l])


# ---------------------------------------------------------------------------
# SVD modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SvdModel:
    mean: np.ndarray       # (2g,)
    modes: np.ndarray      # (2g, m), orthonormal columns
    singular: np.ndarray   # (m,), non-increasing

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "modes": self.modes.tolist(),
                "singular": self.singular.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.array(d["mean"]), modes=np.array(d["modes"]),
                   singular=np.array(d["singular"]))


def _dataset_rows(dataset) -> np.ndarray:
    yu = dataset.camber + dataset.thickness / 2.0
    yl = dataset.camber - dataset.thickness / 2.0
    return np.concatenate([yu, yl], axis=1)


def svd_fit(dataset, m: int) -> SvdModel:
    """Top-m orthonormal modes of the y-coordinate deviations from the mean."""
    rows = _dataset_rows(dataset)
    mean = rows.mean(axis=0)
    centered = rows - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size else 0
    if m > rank:
        raise RankDeficient(f"requested {m} modes but data rank is {rank}")
    return SvdModel(mean=mean, modes=vt[:m].T, singular=s[:m])


def svd_eval(model: SvdModel, dv, x_grid: np.ndarray | None = None) -> AirfoilSection:
    x = cosine_grid() if x_grid is None else x_grid
    y = model.mean + model.modes @ np.asarray(dv, dtype=float)
    g = x.size
    return AirfoilSection(x=x, y_upper=y[:g], y_lower=y[g:])


class SvdParameterization(Parameterization):
    name = "svd"

    def __init__(self, model: SvdModel, grid=None):
        super().__init__(n_dv=model.n_modes, grid=grid)
        self.model = model

    def decode(self, dv):
        return svd_eval(self.model, dv, self.grid)

    def fit(self, section: AirfoilSection) -> np.ndarray:
        row = np.concatenate([section.y_upper, section.y_lower])
        return self.model.modes.T @ (row - self.model.mean)


# ---------------------------------------------------------------------------
# Bounds over dataset fits
# ---------------------------------------------------------------------------

def derive_bounds(param: Parameterization, dataset, max_failure_fraction: float = 0.10) -> np.ndarray:
    """Per-variable percentile bounds over design vectors fitted to the dataset."""
    fits = []
    failures = 0
    for i in range(dataset.n_samples):
        tc = dataset.sample(i)
        section = AirfoilSection(x=tc.x, y_upper=tc.c + tc.t / 2, y_lower=tc.c - tc.t / 2)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fits.append(param.fit(section))
        except Exception:
            failures += 1
    if not fits or failures > max_failure_fraction * dataset.n_samples:
        raise FitFailure(
            f"{param.label()}: {failures}/{dataset.n_samples} fits failed")
    fits = np.array(fits)
    lo = np.percentile(fits, BOUND_PERCENTILES[0], axis=0)
    hi = np.percentile(fits, BOUND_PERCENTILES[1], axis=0)
    width = hi - lo
    degenerate = width < 1e-9
    if np.any(degenerate):
        # constant fitted variables (e.g. the TE gap of closed sections) get
        # a token interval so sampling stays well defined
        pad = np.maximum(1e-3, 1e-3 * np.abs(lo))
        lo = np.where(degenerate, lo - pad, lo)
        hi = np.where(degenerate, hi + pad, hi)
    if np.any(hi - lo <= 0) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise FitFailure(f"{param.label()}: degenerate or non-finite bounds")
    param.bounds = np.stack([lo, hi], axis=1)
    return param.bounds


def feasibility_of_section(section: AirfoilSection, tol: float = 1e-9) -> bool:
    return bool(np.min(decompose(section).t) >= -tol)


def section_features(section: AirfoilSection):
    return extract_features(decompose(section))
