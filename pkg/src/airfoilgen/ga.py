"""Real-coded elitist genetic algorithm: tournament selection, simulated
binary crossover and polynomial mutation, with stall-based termination."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluatorFailure

PENALTY = -1e6


@dataclass(frozen=True)
class GaConfig:
    population: int = 100
    generations: int = 100
    crossover_rate: float = 0.9
    crossover_eta: float = 15.0
    mutation_rate: float | None = None     # defaults to 1/n_dv
    mutation_eta: float = 20.0
    tournament_size: int = 2
    elitism: int = 1
    seed: int = 0
    stall_window: int | None = None        # generations; None disables
    stall_tol: float = 1e-9
    max_failed_generations: int = 3

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        for rate in (self.crossover_rate,):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


@dataclass
class RunHistory:
    best: np.ndarray              # best-so-far fitness per generation
    mean: np.ndarray              # population mean fitness per generation
    best_vector: np.ndarray
    best_fitness: float
    generations_used: int
    seed: int
    extra: dict = field(default_factory=dict)


def _sbx_pair(a, b, eta, bounds, rng):
    """Deb's simulated binary crossover on one parent pair."""
    child1, child2 = a.copy(), b.copy()
    do = rng.random(a.size) <= 0.5
    close = np.abs(a - b) < 1e-14
    u = rng.random(a.size)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    mask = do & ~close
    c1 = 0.5 * ((1 + beta) * a + (1 - beta) * b)
    c2 = 0.5 * ((1 - beta) * a + (1 + beta) * b)
    child1[mask] = c1[mask]
    child2[mask] = c2[mask]
    lo, hi = bounds[:, 0], bounds[:, 1]
    return np.clip(child1, lo, hi), np.clip(child2, lo, hi)


def _polynomial_mutation(x, eta, rate, bounds, rng):
    """Deb's polynomial mutation, in place on a copy."""
    y = x.copy()
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    do = rng.random(x.size) < rate
    if not np.any(do):
        return y
    u = rng.random(x.size)
    delta1 = (y - lo) / span
    delta2 = (hi - y) / span
    mut_pow = 1.0 / (eta + 1.0)
    d_small = (2 * u + (1 - 2 * u) * (1 - delta1) ** (eta + 1)) ** mut_pow - 1.0
    d_large = 1.0 - (2 * (1 - u) + 2 * (u - 0.5) * (1 - delta2) ** (eta + 1)) ** mut_pow
    delta = np.where(u <= 0.5, d_small, d_large)
    y[do] = y[do] + delta[do] * span[do]
    return np.clip(y, lo, hi)


def ga_maximize(evaluate_batch, bounds: np.ndarray, config: GaConfig) -> RunHistory:
    """Maximize a batch fitness function over a box.

    evaluate_batch maps a (P, n_dv) matrix to a (P,) fitness array; failed
    or infeasible individuals must already carry the PENALTY fitness.  Stops
    at the generation cap or when the best fitness improves by less than
    stall_tol over the configured stall window.  Raises EvaluatorFailure
    after max_failed_generations consecutive all-penalty generations.
    """
    bounds = np.asarray(bounds, dtype=float)
    n_dv = bounds.shape[0]
    rng = np.random.default_rng(config.seed)
    mut_rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / n_dv

    pop = rng.uniform(bounds[:, 0], bounds[:, 1], size=(config.population, n_dv))
    # deterministic anchor individuals: box midpoint and the clipped origin
    pop[0] = 0.5 * (bounds[:, 0] + bounds[:, 1])
    if config.population > 2:
        pop[1] = np.clip(0.0, bounds[:, 0], bounds[:, 1])
    fitness = np.asarray(evaluate_batch(pop), dtype=float)
    best_hist, mean_hist = [], []
    failed_streak = 0

    order = np.argsort(fitness)[::-1]
    best_vec = pop[order[0]].copy()
    best_fit = fitness[order[0]]

    gen = 0
    for gen in range(1, config.generations + 1):
        if np.all(fitness <= PENALTY):
            failed_streak += 1
            if failed_streak >= config.max_failed_generations:
                raise EvaluatorFailure(
                    f"{failed_streak} consecutive generations with no valid evaluation")
        else:
            failed_streak = 0

        # tournament selection into a mating pool
        pool = np.empty_like(pop)
        for i in range(config.population):
            rivals = rng.integers(0, config.population, size=config.tournament_size)
            pool[i] = pop[rivals[np.argmax(fitness[rivals])]]

        # SBX pairs + polynomial mutation
        children = np.empty_like(pop)
        for i in range(0, config.population - 1, 2):
            a, b = pool[i], pool[i + 1]
            if rng.random() <= config.crossover_rate:
                a, b = _sbx_pair(a, b, config.crossover_eta, bounds, rng)
            children[i], children[i + 1] = a, b
        if config.population % 2:
            children[-1] = pool[-1]
        for i in range(config.population):
            children[i] = _polynomial_mutation(
                children[i], config.mutation_eta, mut_rate, bounds, rng)

        # elitism: carry the best individuals over unchanged
        if config.elitism > 0:
            elite_idx = np.argsort(fitness)[::-1][: config.elitism]
            children[: config.elitism] = pop[elite_idx]

        pop = children
        fitness = np.asarray(evaluate_batch(pop), dtype=float)
        gen_best = int(np.argmax(fitness))
        if fitness[gen_best] > best_fit:
            best_fit = fitness[gen_best]
            best_vec = pop[gen_best].copy()
        best_hist.append(best_fit)
        mean_hist.append(float(np.mean(fitness)))

        if config.stall_window and len(best_hist) > config.stall_window:
            if best_hist[-1] - best_hist[-1 - config.stall_window] < config.stall_tol:
                break

    return RunHistory(
        best=np.array(best_hist),
        mean=np.array(mean_hist),
        best_vector=best_vec,
        best_fitness=float(best_fit),
        generations_used=gen,
        seed=config.seed,
    )
