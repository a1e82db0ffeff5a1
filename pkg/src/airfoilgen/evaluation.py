"""Comparative metrics: inverse fitting, feasibility ratio, per-feature
maximum Pearson correlation, latent traversal and constrained generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .baselines import Parameterization, feasibility_of_section
from .errors import AirfoilGenError, DimOutOfRange
from .ga import PENALTY, GaConfig, RunHistory, ga_maximize
from .geometry import AirfoilSection, ThicknessCamber, decompose, extract_features, recompose
from .vae import Checkpoint

FEASIBILITY_TOL = 1e-9


class AgParameterization(Parameterization):
    """A trained generator behind the common decode interface; its bounds
    are the training latent box."""

    name = "ag"

    def __init__(self, ckpt: Checkpoint):
        model = ckpt.model
        super().__init__(n_dv=model.n_latent, grid=model.x_grid)
        self.ckpt = ckpt
        self.bounds = np.stack([ckpt.latent_box.lo, ckpt.latent_box.hi], axis=1)

    def decode(self, dv) -> AirfoilSection:
        return self.decode_batch(np.atleast_2d(dv))[0]

    def decode_batch(self, dvs) -> list:
        t, c = self.ckpt.model.decode_numpy(np.asarray(dvs, dtype=float))
        x = self.grid
        return [recompose(ThicknessCamber(x=x, t=t[i], c=c[i])) for i in range(len(t))]

    def fit(self, section: AirfoilSection) -> np.ndarray:
        tc = decompose(section)
        return self.ckpt.model.encode_means(tc.t, tc.c)[0]


def decode_batch(param: Parameterization, dvs: np.ndarray) -> list:
    """Decode a matrix of design vectors; failed decodes become None."""
    if isinstance(param, AgParameterization):
        return param.decode_batch(dvs)
    out = []
    for dv in dvs:
        try:
            out.append(param.decode(dv))
        except (AirfoilGenError, ValueError):
            out.append(None)
    return out


# ---------------------------------------------------------------------------
# Inverse fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    target_index: int
    best_dv: np.ndarray
    best_mse: float
    generations_used: int


def section_mse(a: AirfoilSection, b: AirfoilSection) -> float:
    return float(np.mean(np.concatenate([
        (a.y_upper - b.y_upper) ** 2, (a.y_lower - b.y_lower) ** 2])))


def inverse_fit(param: Parameterization, target: AirfoilSection,
                ga_config: GaConfig | None = None, target_index: int = -1) -> FitResult:
    """GA search for the design vector whose decode best matches the target.

    Decode failures never abort a run; they enter the population with the
    penalty fitness."""
    cfg = ga_config or GaConfig(population=200, generations=5000,
                                stall_window=200, stall_tol=1e-9)

    ty_u, ty_l = target.y_upper, target.y_lower

    def fitness(pop):
        sections = decode_batch(param, pop)
        out = np.full(len(pop), PENALTY)
        for i, sec in enumerate(sections):
            if sec is None:
                continue
            mse = np.mean(np.concatenate([
                (sec.y_upper - ty_u) ** 2, (sec.y_lower - ty_l) ** 2]))
            if np.isfinite(mse):
                out[i] = -mse
        return out

    history = ga_maximize(fitness, param.bounds, cfg)
    return FitResult(
        target_index=target_index,
        best_dv=history.best_vector,
        best_mse=-history.best_fitness,
        generations_used=history.generations_used,
    )


def cumulative_mse_curve(results: list, n_points: int = 100):
    """Empirical CDF of best-fit MSE on a log-spaced grid; returns
    (mse_grid, cumulative_percent)."""
    if not results:
        raise ValueError("need at least one fit result")
    values = np.array([r.best_mse for r in results])
    lo = max(values.min() / 2.0, 1e-16)
    hi = values.max() * 2.0
    grid = np.logspace(np.log10(lo), np.log10(hi), n_points)
    cum = 100.0 * np.array([(values <= g).mean() for g in grid])
    return grid, cum


# ---------------------------------------------------------------------------
# Feasibility and intuitiveness
# ---------------------------------------------------------------------------

def feasibility_ratio(param: Parameterization, n_samples: int,
                      rng: np.random.Generator) -> float:
    """Percentage of uniform-in-bounds samples decoding to non-intersecting
    sections; decode failures count as infeasible."""
    dvs = param.sample(rng, n_samples)
    sections = decode_batch(param, dvs)
    ok = sum(
        1 for sec in sections
        if sec is not None and feasibility_of_section(sec, FEASIBILITY_TOL))
    return 100.0 * ok / n_samples


def _pearson_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson matrix between columns of a (n,p) and b (n,q) -> (p,q)."""
    az = a - a.mean(axis=0)
    bz = b - b.mean(axis=0)
    sa = az.std(axis=0)
    sb = bz.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (az.T @ bz) / (len(a) * np.outer(sa, sb))
    return corr


CMAX_FEATURES = ("m_max", "gamma_te", "t_max", "log_r_le")


def cmax_table(param: Parameterization, n_samples: int,
               rng: np.random.Generator) -> dict:
    """Per-feature maximum |Pearson| between any single design variable and
    the feature over random samples; r_le enters in log10."""
    dvs = param.sample(rng, n_samples)
    sections = decode_batch(param, dvs)
    rows, kept = [], []
    for i, sec in enumerate(sections):
        if sec is None:
            continue
        f = extract_features(decompose(sec))
        rows.append([f.m_max, f.gamma_te, f.t_max,
                     np.log10(max(f.r_le, 1e-6))])
        kept.append(i)
    feats = np.array(rows)
    corr = _pearson_columns(dvs[kept], feats)  # (n_dv, 4)
    out = {}
    for j, name in enumerate(CMAX_FEATURES):
        col = corr[:, j]
        if np.all(np.isnan(col)) or feats[:, j].std() < 1e-14:
            out[name] = float("nan")  # undefined: feature has no variance
        else:
            out[name] = float(np.nanmax(np.abs(col)))
    return out


# ---------------------------------------------------------------------------
# Latent-space demonstrations
# ---------------------------------------------------------------------------

def latent_traversal(ckpt: Checkpoint, base: AirfoilSection, dim: int,
                     n_steps: int) -> list:
    """Sweep one latent of the encoded base across the box; n_steps = 0
    returns just the reconstruction."""
    model = ckpt.model
    if not 0 <= dim < model.n_latent:
        raise DimOutOfRange(f"latent dim {dim} outside 0..{model.n_latent - 1}")
    tc = decompose(base)
    z0 = model.encode_means(tc.t, tc.c)[0]
    if n_steps <= 0:
        z = z0[None, :]
    else:
        z = np.tile(z0, (n_steps, 1))
        z[:, dim] = ckpt.latent_box.sweep(dim, n_steps)
    t, c = model.decode_numpy(z)
    x = model.x_grid
    return [recompose(ThicknessCamber(x=x, t=t[i], c=c[i])) for i in range(len(t))]


def constrained_generate(ckpt: Checkpoint, fixed: dict, n: int,
                         rng: np.random.Generator) -> list:
    """Decode n samples with the requested physical latents pinned and all
    remaining dims uniform in the latent box."""
    model = ckpt.model
    dim_map = model.feature_dim_map()
    unknown = set(fixed) - set(dim_map)
    if unknown:
        raise KeyError(f"not physical features: {sorted(unknown)}")
    if n <= 0:
        return []
    box = ckpt.latent_box
    z = rng.uniform(box.lo, box.hi, size=(n, model.n_latent))
    for name, value in fixed.items():
        z[:, dim_map[name]] = value
    t, c = model.decode_numpy(z)
    x = model.x_grid
    return [recompose(ThicknessCamber(x=x, t=t[i], c=c[i])) for i in range(n)]


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

def export_cdf_csv(path, curves: dict) -> None:
    """curves: label -> (mse_grid, cumulative_percent)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "mse", "cumulative_percent"])
        for label, (grid, cum) in curves.items():
            for g, c in zip(grid, cum):
                writer.writerow([label, f"{g:.6e}", f"{c:.3f}"])


def export_feasibility_csv(path, ratios: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_dv", "feasibility_ratio_percent"])
        for label, (n_dv, ratio) in ratios.items():
            writer.writerow([label, n_dv, f"{ratio:.1f}"])


def export_cmax_csv(path, tables: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *CMAX_FEATURES])
        for label, table in tables.items():
            writer.writerow([label] + [f"{table[k]:.3f}" for k in CMAX_FEATURES])


def export_traversal_csv(path, sections: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "y_upper", "y_lower"])
        for step, sec in enumerate(sections):
            for x, yu, yl in zip(sec.x, sec.y_upper, sec.y_lower):
                writer.writerow([step, f"{x:.6f}", f"{yu:.6e}", f"{yl:.6e}"])
