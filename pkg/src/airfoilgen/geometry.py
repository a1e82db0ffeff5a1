"""Canonical airfoil geometry: cosine grid, sections, thickness/camber,
geometric features and their min-max normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeature

N_GRID = 101

FEATURE_NAMES = ("m_max", "gamma_te", "t_max", "r_le")

R_LE_FLOOR = 1e-6  # clamp before taking log10


def cosine_grid(n: int = N_GRID) -> np.ndarray:
    """x_i = (1 - cos(pi*i/(n-1)))/2, clustering points at both edges."""
    i = np.arange(n)
    return (1.0 - np.cos(np.pi * i / (n - 1))) / 2.0


@dataclass(frozen=True)
class AirfoilSection:
    """Upper/lower surface heights sampled on the shared cosine x-grid."""

    x: np.ndarray
    y_upper: np.ndarray
    y_lower: np.ndarray

    def __post_init__(self):
        if not (self.x.shape == self.y_upper.shape == self.y_lower.shape):
            raise ValueError("x, y_upper, y_lower must share one shape")

    @property
    def n(self) -> int:
        return self.x.size

    def is_feasible(self, tol: float = 1e-9) -> bool:
        """Non-self-intersecting: upper surface everywhere above lower."""
        return bool(np.min(self.y_upper - self.y_lower) >= -tol)


@dataclass(frozen=True)
class ThicknessCamber:
    """Thickness t(x) and camber c(x) distributions on the shared grid."""

    x: np.ndarray
    t: np.ndarray
    c: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size


def decompose(section: AirfoilSection) -> ThicknessCamber:
    """t = y_u - y_l, c = (y_u + y_l)/2, pointwise."""
    t = section.y_upper - section.y_lower
    c = 0.5 * (section.y_upper + section.y_lower)
    return ThicknessCamber(x=section.x, t=t, c=c)


def recompose(tc: ThicknessCamber) -> AirfoilSection:
    """Exact algebraic inverse of :func:`decompose`."""
    return AirfoilSection(
        x=tc.x,
        y_upper=tc.c + 0.5 * tc.t,
        y_lower=tc.c - 0.5 * tc.t,
    )


@dataclass(frozen=True)
class GeometricFeatures:
    """The four geometric features used as physical labels.

    Angles are radians; lengths are chord fractions.  ``normalized`` holds
    the min-max images in feature order (m_max, gamma_te, t_max, r_le) when
    a normalizer was applied, else None.
    """

    m_max: float
    gamma_te: float
    t_max: float
    r_le: float
    normalized: np.ndarray | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.m_max, self.gamma_te, self.t_max, self.r_le])


def extract_features(tc: ThicknessCamber) -> GeometricFeatures:
    """Grid-based feature estimators.

    * t_max / m_max: discrete maxima over the grid.
    * gamma_te: camber tangent angle at the trailing edge from a
      two-interval backward difference (single-interval differences are
      dominated by the cosine grid's TE clustering).
    * r_le: square-root nose model h = a*sqrt(x) evaluated at the first
      interior grid point, giving r = (t1/2)^2 / (2*x1).
    """
    t_max = float(np.max(tc.t))
    m_max = float(np.max(tc.c))
    n = tc.n
    dx = tc.x[n - 1] - tc.x[n - 3]
    dc = tc.c[n - 1] - tc.c[n - 3]
    gamma_te = float(-np.arctan2(dc, dx))
    x1 = tc.x[1]
    r_le = float((tc.t[1] / 2.0) ** 2 / (2.0 * x1))
    return GeometricFeatures(m_max=m_max, gamma_te=gamma_te, t_max=t_max, r_le=r_le)


@dataclass
class FeatureNormalizer:
    """Per-feature min-max normalization fitted on a training set.

    r_le is log10-scaled (clamped below at R_LE_FLOOR) before min-max, so
    its normalized axis matches the log(r_le) convention used everywhere
    downstream."""

    lo: np.ndarray = field(default_factory=lambda: np.zeros(4))
    hi: np.ndarray = field(default_factory=lambda: np.ones(4))
    fitted: bool = False

    LOG_INDEX = FEATURE_NAMES.index("r_le")

    def fit(self, features: list[GeometricFeatures]) -> "FeatureNormalizer":
        if len(features) < 2:
            raise DegenerateFeature("need at least 2 samples to fit bounds")
        raw = np.array([f.as_array() for f in features])
        raw[:, self.LOG_INDEX] = np.log10(np.maximum(raw[:, self.LOG_INDEX], R_LE_FLOOR))
        self.lo = raw.min(axis=0)
        self.hi = raw.max(axis=0)
        zero = self.hi - self.lo <= 0
        if np.any(zero):
            bad = [FEATURE_NAMES[i] for i in np.nonzero(zero)[0]]
            raise DegenerateFeature(f"zero range for feature(s): {', '.join(bad)}")
        self.fitted = True
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Raw feature vector(s) (..., 4) -> normalized (..., 4)."""
        v = np.array(values, dtype=float, copy=True)
        v[..., self.LOG_INDEX] = np.log10(np.maximum(v[..., self.LOG_INDEX], R_LE_FLOOR))
        return (v - self.lo) / (self.hi - self.lo)

    def inverse(self, normalized: np.ndarray) -> np.ndarray:
        v = self.lo + np.asarray(normalized, dtype=float) * (self.hi - self.lo)
        v = np.array(v, copy=True)
        v[..., self.LOG_INDEX] = 10.0 ** v[..., self.LOG_INDEX]
        return v

    def attach(self, feats: GeometricFeatures) -> GeometricFeatures:
        return GeometricFeatures(
            m_max=feats.m_max,
            gamma_te=feats.gamma_te,
            t_max=feats.t_max,
            r_le=feats.r_le,
            normalized=self.transform(feats.as_array()),
        )

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "fitted": self.fitted}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureNormalizer":
        norm = cls(lo=np.array(d["lo"], dtype=float), hi=np.array(d["hi"], dtype=float))
        norm.fitted = bool(d["fitted"])
        return norm


def fit_normalizer(features: list[GeometricFeatures]) -> FeatureNormalizer:
    return FeatureNormalizer().fit(features)
