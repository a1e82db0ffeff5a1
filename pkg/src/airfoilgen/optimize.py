"""Airfoil shape optimization: constraint handling, GA driving a flow
evaluator, repeated-trial statistics and design-space exports."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import Parameterization, feasibility_of_section
from .errors import InfeasibleBox
from .evaluation import AgParameterization, decode_batch
from .ga import PENALTY, GaConfig, RunHistory, ga_maximize
from .geometry import AirfoilSection, decompose, extract_features
from .xfoil import XfoilCase, XfoilResult, xfoil_evaluate

FEATURE_ORDER = ("m_max", "gamma_te", "t_max", "r_le")


@dataclass(frozen=True)
class ConstraintSet:
    """Geometric constraints; t_min > 0 is always enforced."""

    m_max_limit: float | None = None          # m_max < limit
    t_max_range: tuple | None = None          # lo < t_max < hi
    r_le_limit: float | None = None
    r_le_above: bool = False                  # False: r_le < limit, True: r_le > limit

    def flags(self, feats) -> dict:
        """Pass/fail per constraint; unset constraints always pass."""
        out = {"m_max": True, "t_max": True, "r_le": True}
        if self.m_max_limit is not None:
            out["m_max"] = feats.m_max < self.m_max_limit
        if self.t_max_range is not None:
            lo, hi = self.t_max_range
            out["t_max"] = lo < feats.t_max < hi
        if self.r_le_limit is not None:
            out["r_le"] = (feats.r_le > self.r_le_limit if self.r_le_above
                           else feats.r_le < self.r_le_limit)
        return out

    def satisfied(self, feats) -> bool:
        return all(self.flags(feats).values())


UNCONSTRAINED = ConstraintSet()
CONSTRAINED = ConstraintSet(m_max_limit=0.03, t_max_range=(0.1, 0.12),
                            r_le_limit=0.005)


@dataclass
class OptimizationProblem:
    parameterization: Parameterization
    case: XfoilCase
    constraints: ConstraintSet = UNCONSTRAINED


def impose_constraints(problem: OptimizationProblem):
    """Return (bounds, post_hoc_check).

    For the generator, whose physical latents are the normalized features,
    constraint intervals map straight onto latent bounds (pure box
    handling) and the post-hoc check is only the built-in t_min >= 0.  For
    every other parameterization the bounds are untouched and violations
    are rejected after decoding (death penalty)."""
    param = problem.parameterization
    cons = problem.constraints
    bounds = param.bounds.copy()

    if isinstance(param, AgParameterization):
        model = param.ckpt.model
        norm = model.normalizer
        dim_map = model.feature_dim_map()

        def tighten(feature, lo_raw, hi_raw):
            dim = dim_map[feature]
            probe = np.zeros(4)
            idx = FEATURE_ORDER.index(feature)
            images = []
            for raw in (lo_raw, hi_raw):
                if raw is None:
                    images.append(None)
                    continue
                probe_v = probe.copy()
                probe_v[idx] = raw
                images.append(norm.transform(probe_v)[idx])
            lo = bounds[dim, 0] if images[0] is None else max(bounds[dim, 0], images[0])
            hi = bounds[dim, 1] if images[1] is None else min(bounds[dim, 1], images[1])
            if not lo < hi:
                raise InfeasibleBox(
                    f"{feature} constraint maps outside the trained envelope")
            bounds[dim] = (lo, hi)

        if cons.m_max_limit is not None:
            tighten("m_max", None, cons.m_max_limit)
        if cons.t_max_range is not None:
            tighten("t_max", cons.t_max_range[0], cons.t_max_range[1])
        if cons.r_le_limit is not None:
            if cons.r_le_above:
                tighten("r_le", cons.r_le_limit, None)
            else:
                tighten("r_le", None, cons.r_le_limit)

        def check(section: AirfoilSection) -> bool:
            return feasibility_of_section(section)

        return bounds, check

    def check(section: AirfoilSection) -> bool:
        if not feasibility_of_section(section):
            return False
        return cons.satisfied(extract_features(decompose(section)))

    return bounds, check


def ga_optimize(problem: OptimizationProblem, ga_config: GaConfig,
                evaluator, jobs: int = 1) -> RunHistory:
    """Maximize lift-to-drag with the GA; evaluator(section) -> XfoilResult.

    Infeasible decodes, constraint violations and non-converged solver
    results all receive the penalty fitness.  Per-generation rejection
    counts are recorded in history.extra."""
    param = problem.parameterization
    bounds, check = impose_constraints(problem)
    rejections = []
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def fitness(pop):
        sections = decode_batch(param, pop)
        candidates = []
        for sec in sections:
            candidates.append(sec if sec is not None and check(sec) else None)
        rejections.append(sum(1 for c in candidates if c is None))
        live = [c for c in candidates if c is not None]
        if pool is not None:
            results = list(pool.map(evaluator, live))
        else:
            results = [evaluator(sec) for sec in live]
        out = np.full(len(pop), PENALTY)
        it = iter(results)
        for i, cand in enumerate(candidates):
            if cand is None:
                continue
            res: XfoilResult = next(it)
            if res.converged and res.cd and res.cd > 0:
                out[i] = res.cl / res.cd
        return out

    try:
        history = ga_maximize(fitness, bounds, ga_config)
    finally:
        if pool is not None:
            pool.shutdown()
    history.extra["rejections_per_generation"] = rejections
    history.extra["bounds"] = bounds
    return history


@dataclass
class TrialStatistics:
    histories: list            # RunHistory per successful trial
    mean_history: np.ndarray
    band: np.ndarray           # one-sigma of best-so-far across trials
    representative: int        # index of the trial closest to the mean
    failures: list             # (trial_index, message)


def repeated_trials(problem: OptimizationProblem, ga_config: GaConfig,
                    n_trials: int, evaluator, jobs: int = 1) -> TrialStatistics:
    """Independent seeded repeats; partial results are kept when a trial
    fails."""
    histories, failures = [], []
    for trial in range(n_trials):
        cfg = replace(ga_config, seed=ga_config.seed + trial)
        try:
            histories.append(ga_optimize(problem, cfg, evaluator, jobs=jobs))
        except Exception as exc:  # noqa: BLE001 - record and continue
            failures.append((trial, f"{type(exc).__name__}: {exc}"))
    if not histories:
        raise RuntimeError(f"every trial failed: {failures}")
    length = min(h.best.size for h in histories)
    stack = np.stack([h.best[:length] for h in histories])
    mean = stack.mean(axis=0)
    band = stack.std(axis=0)
    finals = stack[:, -1]
    representative = int(np.argmin(np.abs(finals - mean[-1])))
    return TrialStatistics(histories=histories, mean_history=mean, band=band,
                           representative=representative, failures=failures)


def export_history_csv(path, stats: TrialStatistics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"trial{i}" for i in range(len(stats.histories))]
        writer.writerow(["generation", *cols, "mean", "sigma"])
        length = stats.mean_history.size
        for g in range(length):
            row = [g] + [f"{h.best[g]:.6g}" for h in stats.histories]
            row += [f"{stats.mean_history[g]:.6g}", f"{stats.band[g]:.6g}"]
            writer.writerow(row)


def parallel_coordinates_export(param: Parameterization, n_samples: int,
                                constraints: ConstraintSet,
                                rng: np.random.Generator, path=None):
    """Normalized design vectors with per-constraint pass/fail flags.

    Returns (normalized_dvs, flags) and optionally writes the CSV."""
    dvs = param.sample(rng, n_samples)
    lo, hi = param.bounds[:, 0], param.bounds[:, 1]
    normalized = (dvs - lo) / (hi - lo)
    sections = decode_batch(param, dvs)
    rows = []
    for sec in sections:
        if sec is None:
            rows.append({"t_min": False, "m_max": False, "t_max": False, "r_le": False})
            continue
        flags = {"t_min": feasibility_of_section(sec)}
        flags.update(constraints.flags(extract_features(decompose(sec))))
        rows.append(flags)
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            names = list(rows[0].keys())
            writer.writerow([f"z{i}" for i in range(param.n_dv)] + names)
            for z, flags in zip(normalized, rows):
                writer.writerow([f"{v:.5f}" for v in z] + [int(flags[n]) for n in names])
    return normalized, rows
