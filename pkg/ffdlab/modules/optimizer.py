"""Real-coded genetic algorithm over bounded parameter vectors."""

from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from ffdlab.errors import InvalidBounds, ObjectiveFailure
from ffdlab.modules.backtest import params_from_vector
from ffdlab.services.workers import ordered_map


@dataclass(frozen=True)
class GaConfig:
    population: int = 32
    generations: int = 50
    crossover_rate: float = 0.9
    mutation_rate: float = 0.25
    # std of the Gaussian step as a fraction of each range, annealed to zero
    mutation_scale: float = 0.1
    elite_count: int = 2
    tournament_size: int = 3
    seed: int = 7

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if not 1 <= self.elite_count < self.population:
            raise ValueError("elite_count must lie in [1, population)")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_scale < 0:
            raise ValueError("mutation_scale must be non-negative")


@dataclass(frozen=True)
class GaResult:
    best_params: object
    best_fitness: float
    history: list = field(default_factory=list)
    best_vector: np.ndarray | None = None

    def __iter__(self):
        return iter((self.best_params, self.best_fitness, self.history))


def parse_bounds(text: str, dims: int = 4) -> list[tuple[float, float]]:
    """``"0:10"`` for every dimension, or ``"0:10,0:5,..."`` per dimension."""
    parts = [p for p in text.split(",") if p.strip()]
    try:
        bounds = [tuple(float(x) for x in p.split(":")) for p in parts]
    except ValueError as e:
        raise InvalidBounds(f"cannot parse bounds '{text}'") from e
    if len(bounds) == 1:
        bounds = bounds * dims
    if any(len(b) != 2 for b in bounds):
        raise InvalidBounds(f"bounds must look like lo:hi, got '{text}'")
    return bounds


def _check_bounds(bounds) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(bounds, dtype=np.float64)
    if arr.size == 0 or arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidBounds("bounds must be a non-empty list of (lo, hi) pairs")
    lo, hi = arr[:, 0], arr[:, 1]
    if not (np.all(np.isfinite(arr)) and np.all(lo < hi)):
        raise InvalidBounds(f"every bound needs finite lo < hi, got {arr.tolist()}")
    return lo, hi


def ga_optimize(
    objective,
    bounds,
    cfg: GaConfig = GaConfig(),
    decode=params_from_vector,
    workers: int | None = None,
) -> GaResult:
    """Maximise ``objective(decode(vector))`` inside ``bounds``.

    ``history[g]`` is the best fitness after generation ``g``; generation 0 is
    the seeded initial population, so ``generations=1`` does no evolution.
    All random draws happen on the calling thread, so results do not depend
    on how candidate evaluations are scheduled.
    """
    lo, hi = _check_bounds(bounds)
    span = hi - lo
    rng = np.random.default_rng(cfg.seed)
    n, dims = cfg.population, len(lo)

    def evaluate(vector: np.ndarray) -> float:
        candidate = decode(vector)
        try:
            value = float(objective(candidate))
        except Exception as e:
            raise ObjectiveFailure(candidate, e) from e
        if np.isnan(value):
            raise ObjectiveFailure(candidate, ValueError("objective returned NaN"))
        return value

    population = lo + rng.random((n, dims)) * span
    fitness = np.asarray(ordered_map(evaluate, list(population), workers))
    history = []

    for gen in range(cfg.generations):
        if gen > 0:
            order = np.argsort(-fitness, kind="stable")
            elites = population[order[: cfg.elite_count]]
            elite_fitness = fitness[order[: cfg.elite_count]]
            sigma = cfg.mutation_scale * span * (1.0 - gen / cfg.generations)

            children = np.empty((n - cfg.elite_count, dims))
            for i in range(len(children)):
                a = _tournament(rng, fitness, cfg.tournament_size)
                b = _tournament(rng, fitness, cfg.tournament_size)
                child = population[a].copy()
                if rng.random() < cfg.crossover_rate:
                    mask = rng.random(dims) < 0.5
                    child[mask] = population[b][mask]
                mutate = rng.random(dims) < cfg.mutation_rate
                child = child + mutate * rng.normal(0.0, 1.0, dims) * sigma
                children[i] = np.clip(child, lo, hi)

            child_fitness = np.asarray(ordered_map(evaluate, list(children), workers))
            population = np.vstack([elites, children])
            fitness = np.concatenate([elite_fitness, child_fitness])

        best = int(np.argmax(fitness))
        history.append(float(fitness[best]))
        logger.debug(f"generation {gen}: best fitness {fitness[best]:.6g}")

    best = int(np.argmax(fitness))
    logger.info(
        f"GA finished after {cfg.generations} generations, "
        f"best fitness {fitness[best]:.6g}"
    )
    return GaResult(
        best_params=decode(population[best]),
        best_fitness=float(fitness[best]),
        history=history,
        best_vector=population[best].copy(),
    )


def _tournament(rng: np.random.Generator, fitness: np.ndarray, size: int) -> int:
    contenders = rng.choice(len(fitness), size=min(size, len(fitness)), replace=False)
    return int(contenders[np.argmax(fitness[contenders])])
