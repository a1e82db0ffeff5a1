"""Differentiable torch twins of the regulated-net pipeline.

The decoder emits free variables; these layers realize control nets, resample
the curves onto the fixed x-grid and compute geometric features, all with
gradients flowing back to the free variables.  Basis values at the inverted
parameter locations are computed in numpy (they carry no gradient of their
own); a first-order correction restores the exact implicit-function gradient
of the resampled values with respect to the control points.
"""

from __future__ import annotations

import numpy as np
import torch

from . import curves
from .geometry import FeatureNormalizer

DTYPE = torch.float64


class CurveEngine:
    """Precomputed knot/basis data for one net layout on one x-grid."""

    def __init__(self, x_grid: np.ndarray, n_control: int = curves.N_CONTROL,
                 degree: int = curves.DEGREE, feature_density: int = curves.FEATURE_DENSITY):
        self.x_grid_np = np.asarray(x_grid, dtype=float)
        self.x_grid = torch.as_tensor(self.x_grid_np, dtype=DTYPE)
        self.n_control = n_control
        self.degree = degree
        self.knots = curves.clamped_uniform_knots(n_control, degree)
        self.dknots = self.knots[1:-1]
        self.d2knots = self.knots[2:-2]
        p = degree
        # span denominators for the derivative control points
        self._q1_den = torch.as_tensor(
            self.knots[p + 1 : p + n_control] - self.knots[1:n_control], dtype=DTYPE)
        self._q2_den = torch.as_tensor(
            self.dknots[p : p + n_control - 2] - self.dknots[1 : n_control - 1], dtype=DTYPE)

        u_dense = np.linspace(0.0, 1.0, feature_density)
        self._dense = self._fixed_gather(u_dense, p, self.knots, n_control)
        self._dense_d1 = self._fixed_gather(u_dense, p - 1, self.dknots, n_control - 1)
        self._te = self._fixed_gather(np.array([1.0]), p - 1, self.dknots, n_control - 1)
        self._le_d1 = self._fixed_gather(np.array([0.0]), p - 1, self.dknots, n_control - 1)
        self._le_d2 = self._fixed_gather(np.array([0.0]), p - 2, self.d2knots, n_control - 2)

    @staticmethod
    def _fixed_gather(u, p, knots, n_ctrl):
        span, bands = curves.basis_bands(u, p, knots)
        cols = span[:, None] - p + np.arange(p + 1)[None, :]
        return (torch.as_tensor(cols, dtype=torch.long),
                torch.as_tensor(bands, dtype=DTYPE))

    # -- net realization ----------------------------------------------------

    def realize(self, kind: str, free: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, n_free) free variables -> control point coordinates (B, N) x and y."""
        n = self.n_control
        expected = curves.free_var_count(kind, n)
        if free.shape[-1] != expected:
            raise ValueError(f"{kind} net expects {expected} free variables")
        gaps = free[:, : n - 1]
        ys = free[:, n - 1 :]
        b = free.shape[0]
        zero = free.new_zeros(b, 1)
        if kind == "thickness":
            deltas = torch.abs(gaps[:, 1:])
            cum = torch.cumsum(deltas, dim=1)
            total = cum[:, -1:]
            degenerate = total < 1e-300
            fallback = torch.arange(1, n - 1, dtype=free.dtype).expand(b, -1) / (n - 2)
            xs = torch.where(degenerate, fallback, cum / torch.where(degenerate, torch.ones_like(total), total))
            x = torch.cat([zero, zero, xs], dim=1)
            y = torch.cat([zero, torch.abs(ys), zero], dim=1)
        else:
            deltas = torch.abs(gaps)
            cum = torch.cumsum(deltas, dim=1)
            total = cum[:, -1:]
            degenerate = total < 1e-300
            fallback = torch.arange(1, n, dtype=free.dtype).expand(b, -1) / (n - 1)
            xs = torch.where(degenerate, fallback, cum / torch.where(degenerate, torch.ones_like(total), total))
            x = torch.cat([zero, xs], dim=1)
            y = torch.cat([zero, ys[:, : n - 2], zero], dim=1)
        return x, y

    # -- resampling onto the x-grid ------------------------------------------

    def resample(self, x_ctrl: torch.Tensor, y_ctrl: torch.Tensor) -> torch.Tensor:
        """Curve values on the fixed x-grid, (B, G), differentiable in both
        control coordinate sets via a first-order implicit correction."""
        p = self.degree
        xc = x_ctrl.detach().cpu().numpy()
        u = curves.invert_parametric_x(xc, p, self.knots, self.x_grid_np)
        b, g = u.shape
        span, bands, dbands = curves.basis_bands(u.ravel(), p, self.knots, derivative=True)
        cols = torch.as_tensor(
            (span[:, None] + np.arange(-p, 1)[None, :]).reshape(b, g, p + 1),
            dtype=torch.long)
        bands_t = torch.as_tensor(bands.reshape(b, g, p + 1), dtype=x_ctrl.dtype)
        dbands_t = torch.as_tensor(dbands.reshape(b, g, p + 1), dtype=x_ctrl.dtype)
        gx = torch.gather(x_ctrl[:, None, :].expand(-1, g, -1), 2, cols)
        gy = torch.gather(y_ctrl[:, None, :].expand(-1, g, -1), 2, cols)
        x = (gx * bands_t).sum(dim=2)
        y = (gy * bands_t).sum(dim=2)
        dx = (gx * dbands_t).sum(dim=2)
        dy = (gy * dbands_t).sum(dim=2)

        # d y/d x * (x_target - x(u*)) vanishes in value but supplies the
        # gradient of the inversion; skip it where the tangent is vertical
        # or at the exactly-pinned endpoints.
        interior = torch.as_tensor((u > 0.0) & (u < 1.0))
        safe = interior & (dx.detach() > 1e-8)
        slope = dy / torch.where(safe, dx, torch.ones_like(dx))
        correction = slope * (self.x_grid - x)
        return y + torch.where(safe, correction, torch.zeros_like(correction))

    # -- features -------------------------------------------------------------

    def _fixed_eval(self, ctrl: torch.Tensor, cols: torch.Tensor, bands: torch.Tensor):
        gathered = ctrl[:, cols]  # (B, M, p+1)
        return (gathered * bands).sum(dim=2)

    def derivative_ctrl(self, x_ctrl, y_ctrl):
        qx = self.degree * (x_ctrl[:, 1:] - x_ctrl[:, :-1]) / self._q1_den
        qy = self.degree * (y_ctrl[:, 1:] - y_ctrl[:, :-1]) / self._q1_den
        return qx, qy

    def dense_y(self, x_ctrl, y_ctrl):
        cols, bands = self._dense
        return self._fixed_eval(y_ctrl, cols, bands)

    def te_tangent(self, x_ctrl, y_ctrl):
        qx, qy = self.derivative_ctrl(x_ctrl, y_ctrl)
        cols, bands = self._te
        return self._fixed_eval(qx, cols, bands)[:, 0], self._fixed_eval(qy, cols, bands)[:, 0]

    def le_curvature_radius(self, x_ctrl, y_ctrl, floor=1e-6, ceil=1e6):
        """Radius of curvature at u = 0, clamped into [floor, ceil]."""
        p = self.degree
        qx, qy = self.derivative_ctrl(x_ctrl, y_ctrl)
        q2x = (p - 1) * (qx[:, 1:] - qx[:, :-1]) / self._q2_den
        q2y = (p - 1) * (qy[:, 1:] - qy[:, :-1]) / self._q2_den
        cols1, bands1 = self._le_d1
        cols2, bands2 = self._le_d2
        xp = self._fixed_eval(qx, cols1, bands1)[:, 0]
        yp = self._fixed_eval(qy, cols1, bands1)[:, 0]
        xpp = self._fixed_eval(q2x, cols2, bands2)[:, 0]
        ypp = self._fixed_eval(q2y, cols2, bands2)[:, 0]
        num = torch.abs(xp * ypp - yp * xpp)
        speed = (xp**2 + yp**2).clamp_min(1e-24)
        kappa = num / speed**1.5
        return (1.0 / kappa.clamp_min(1.0 / ceil)).clamp(floor, ceil)


class TorchNormalizer:
    """Torch application of a fitted FeatureNormalizer."""

    def __init__(self, norm: FeatureNormalizer):
        if not norm.fitted:
            from .errors import UnfittedNormalizer

            raise UnfittedNormalizer("feature normalizer has not been fitted")
        self.lo = torch.as_tensor(norm.lo, dtype=DTYPE)
        self.hi = torch.as_tensor(norm.hi, dtype=DTYPE)
        self.log_index = norm.LOG_INDEX

    def normalize(self, m_max, gamma_te, t_max, r_le):
        """Raw feature tensors -> normalized (B, 4) in canonical order."""
        r = torch.log10(r_le.clamp_min(1e-6))
        raw = torch.stack([m_max, gamma_te, t_max, r], dim=1)
        return (raw - self.lo) / (self.hi - self.lo)


def thickness_camber_features(engine: CurveEngine, t_x, t_y, c_x, c_y, norm: TorchNormalizer):
    """Normalized (m_max, gamma_te, t_max, r_le) of decoded net pairs, (B, 4)."""
    t_max = engine.dense_y(t_x, t_y).max(dim=1).values
    m_max = engine.dense_y(c_x, c_y).max(dim=1).values
    dx, dy = engine.te_tangent(c_x, c_y)
    gamma_te = -torch.atan2(dy, dx.clamp_min(1e-9))
    r_le = engine.le_curvature_radius(t_x, t_y / 2.0)
    return norm.normalize(m_max, gamma_te, t_max, r_le)
