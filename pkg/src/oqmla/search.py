"""Genetic search over model structures."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DatasetSession, ExperimentRecord
from .evaluation import FitnessReport, TestSet, fitness_score
from .inference import InferenceConfig, TrainedModel, train
from .models import Model, PrimitiveSet, chromosome_to_str, random_chromosome

log = logging.getLogger(__name__)

DUPLICATE_RETRIES = 20


class SearchError(RuntimeError):
    """Failure inside one generation of the search."""

    def __init__(self, generation: int, cause: Exception):
        super().__init__(f"generation {generation}: {cause}")
        self.generation = generation


@dataclass(frozen=True)
class SearchConfig:
    population: int = 20
    target_primitives: float = 7
    p_one_to_zero: float = 0.1
    crossover_p: float = 0.8
    beta: float = 1.0
    max_generations: int = 20
    threshold: float = 180.0
    reduce_ratio: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must hold at least 2 models")
        for name in ("p_one_to_zero", "crossover_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.target_primitives <= 0:
            raise ValueError("target number of primitives must be positive")
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def mutation_rates(target: float, set_size: int, p_one_to_zero: float) -> float:
    """Insertion probability making the mutation-only stationary popcount equal ``target``.

    For independent bits the stationary occupation is ``p01 / (p01 + p10)``,
    so ``set_size * p01 / (p01 + p10) = target`` gives
    ``p01 = target * p10 / (set_size - target)``.
    """
    if target >= set_size:
        raise ValueError(f"target {target} must be smaller than the set size {set_size}")
    if target < 0:
        raise ValueError("target must be non-negative")
    if not 0.0 <= p_one_to_zero <= 1.0:
        raise ValueError("p_one_to_zero must lie in [0, 1]")
    return min(1.0, target * p_one_to_zero / (set_size - target))


def mutate(chromosome, p_zero_to_one: float, p_one_to_zero: float, rng: np.random.Generator) -> np.ndarray:
    chromosome = np.asarray(chromosome, dtype=bool)
    u = rng.random(chromosome.size)
    flip = np.where(chromosome, u < p_one_to_zero, u < p_zero_to_one)
    return chromosome ^ flip


def uniform_crossover(a, b, p: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Child 1 takes each gene from ``a`` with probability ``p``; child 2 gets the other parent's gene."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"parent chromosomes differ in length ({a.size} vs {b.size})")
    from_a = rng.random(a.size) < p
    return np.where(from_a, a, b), np.where(from_a, b, a)


def selection_probabilities(fitness: Sequence[float], beta: float) -> np.ndarray:
    f = np.asarray(fitness, dtype=float)
    w = np.exp(beta * (f - f.max()))
    return w / w.sum()


def roulette_select(reports: Sequence[FitnessReport], beta: float, rng: np.random.Generator) -> tuple[int, int]:
    """Indices of two distinct parents drawn with probability ``~ exp(beta * fitness)``."""
    if len(reports) < 2:
        raise ValueError("selection needs at least two members")
    probs = selection_probabilities([r.fitness for r in reports], beta)
    i, j = rng.choice(len(reports), size=2, replace=False, p=probs)
    return int(i), int(j)


@dataclass
class Individual:
    id: str
    chromosome: np.ndarray
    trained: TrainedModel | None = None  # after reduction
    report: FitnessReport | None = None
    elite: bool = False

    @property
    def evaluated(self) -> bool:
        return self.report is not None


@dataclass
class Generation:
    index: int
    members: list[Individual]


def _distinct(child: np.ndarray, taken: set, p01: float, p10: float, rng) -> np.ndarray:
    for _ in range(DUPLICATE_RETRIES):
        if chromosome_to_str(child) not in taken:
            break
        child = mutate(child, p01, p10, rng)
    return child


def genetic_step(generation: Generation, config: SearchConfig, rng: np.random.Generator) -> Generation:
    """Elitism, roulette selection, uniform crossover and mutation."""
    members = generation.members
    if not all(m.evaluated for m in members):
        raise ValueError("every member must be evaluated before the genetic step")
    set_size = members[0].chromosome.size
    p10 = config.p_one_to_zero
    p01 = mutation_rates(config.target_primitives, set_size, p10)
    ranked = sorted(members, key=lambda m: (-m.report.fitness, m.report.model_id))
    reports = [m.report for m in ranked]
    g = generation.index + 1
    best = ranked[0]
    elite = Individual(f"g{g}-0", best.chromosome.copy(), best.trained,
                       dataclasses.replace(best.report, model_id=f"g{g}-0"), True)
    offspring = [elite]
    taken = {chromosome_to_str(elite.chromosome)}
    while len(offspring) < config.population:
        i, j = roulette_select(reports, config.beta, rng)
        children = uniform_crossover(ranked[i].chromosome, ranked[j].chromosome, config.crossover_p, rng)
        for child in children:
            if len(offspring) == config.population:
                break
            child = mutate(child, p01, p10, rng)
            child = _distinct(child, taken, p01, p10, rng)
            taken.add(chromosome_to_str(child))
            offspring.append(Individual(f"g{g}-{len(offspring)}", child))
    return Generation(g, offspring)


def initial_generation(config: SearchConfig, set_size: int, rng: np.random.Generator) -> Generation:
    p10 = config.p_one_to_zero
    p01 = mutation_rates(config.target_primitives, set_size, p10)
    members, taken = [], set()
    for i in range(config.population):
        chrom = _distinct(random_chromosome(config.target_primitives, set_size, rng), taken, p01, p10, rng)
        taken.add(chromosome_to_str(chrom))
        members.append(Individual(f"g0-{i}", chrom))
    return Generation(0, members)


def reduce_trained(trained: TrainedModel, ratio: float) -> TrainedModel:
    """Prune terms indistinguishable from zero; survivors keep rates and dispersions."""
    model = trained.model
    rates = np.asarray(model.rates)
    keep = np.abs(rates) >= ratio * trained.stds
    if keep.all():
        return trained
    chrom = np.array(model.chromosome)
    chrom[np.flatnonzero(chrom)[~keep]] = False
    reduced = Model(model.pset, chrom, rates[keep])
    return dataclasses.replace(trained, model=reduced, stds=trained.stds[keep])


# rng streams: (seed, 0, generation, member) trains one member,
# (seed, 1, generation) drives the genetic step that creates generation+1
def _member_rng(seed: int, generation: int, member: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, generation, member]))


def _step_rng(seed: int, generation: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, generation]))


@dataclass
class SearchResult:
    best: Individual
    trace: list[dict] = field(default_factory=list)
    history: list[list[dict]] = field(default_factory=list)
    converged: bool = False
    experiments: int = 0

    @property
    def generations(self) -> int:
        return len(self.trace)


def member_summary(ind: Individual) -> dict:
    return {
        "id": ind.id,
        "chromosome": chromosome_to_str(ind.chromosome),
        "elite": ind.elite,
        "model": str(ind.trained.model) if ind.trained else None,
        "rmse": ind.report.rmse if ind.report else None,
        "fitness": ind.report.fitness if ind.report else None,
    }


def run_search(config: SearchConfig, pset: PrimitiveSet, train_records: Sequence[ExperimentRecord],
               tests: TestSet, inference: InferenceConfig = InferenceConfig(),
               train_fn: Callable = train, on_generation: Callable | None = None) -> SearchResult:
    """Train, reduce, score and breed generations until the fitness threshold or the generation cap."""
    generation = initial_generation(config, len(pset), _step_rng(config.seed, 0))
    result = None
    trace, history = [], []
    experiments = 0
    for g in range(config.max_generations):
        try:
            for k, ind in enumerate(generation.members):
                if ind.evaluated:
                    continue
                rng = _member_rng(config.seed, g, k)
                session = DatasetSession(train_records, rng, shots=inference.shots)
                trained = train_fn(Model.zeros(ind.chromosome, pset), session, inference, rng)
                experiments += len(trained.experiments)
                trained = reduce_trained(trained, config.reduce_ratio)
                ind.trained = trained
                ind.chromosome = np.array(trained.model.chromosome)
                ind.report = fitness_score(trained.model, tests, ind.id)
        except Exception as exc:
            raise SearchError(g, exc) from exc
        ranked = sorted(generation.members, key=lambda m: (-m.report.fitness, m.report.model_id))
        fits = [m.report.fitness for m in generation.members]
        trace.append({"generation": g, "best_fitness": ranked[0].report.fitness,
                      "mean_fitness": float(np.mean(fits)), "best_id": ranked[0].id})
        history.append([member_summary(m) for m in generation.members])
        log.info("generation %d: best %.2f (%s) mean %.2f", g, ranked[0].report.fitness,
                 ranked[0].trained.model, np.mean(fits))
        if on_generation is not None:
            on_generation(g, ranked)
        result = ranked[0]
        if result.report.fitness >= config.threshold:
            return SearchResult(result, trace, history, True, experiments)
        if g + 1 < config.max_generations:
            generation = genetic_step(generation, config, _step_rng(config.seed, g + 1))
    return SearchResult(result, trace, history, False, experiments)
