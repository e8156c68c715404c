"""Generational loop: instantiation, multi-objective selection, island model.

Randomness is drawn from independent streams keyed by
``(seed, purpose, generation, island, index)``, so a run is reproducible
bit for bit no matter how many worker threads instantiate offspring.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import Options, SelectionConfig
from .exprtree.nodes import ExprNode, max_variable_index, n_parameters
from .exprtree.text import parse, to_text
from .exprtree.transform import (
    canonical_reorder,
    check_grammar,
    complexity,
    recursive_complexity,
    remove_redundant_params,
    trim_to_size,
)
from .fitting import Dataset, Measures, compute_measures, fit_params_lm
from .genetics import mutate, random_expression

log = logging.getLogger("symreg")

_OFFSPRING, _SELECT, _MIGRATE, _INIT = range(4)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


@dataclass
class Individual:
    expr: ExprNode
    measures: Measures
    compl: int
    recursive_compl: float
    n_params: int
    age: int = 0
    valid: bool = True
    birth: int = 0
    text: str = ""

    def __post_init__(self):
        if not self.text:
            self.text = to_text(self.expr)

    def value(self, name: str) -> float:
        if name in ("compl", "recursive_compl", "n_params", "age"):
            return float(getattr(self, name))
        return float(getattr(self.measures, name))

    def attributes(self) -> dict:
        out = dict(self.measures.as_dict())
        out.update(compl=self.compl, recursive_compl=self.recursive_compl, n_params=self.n_params, age=self.age, valid=self.valid)
        return out


@dataclass
class Island:
    id: int
    population: list[Individual]
    capacity: int


def constraint_violations(expr: ExprNode, data: Dataset) -> bool:
    """Hook for constraint checks after fitting; currently accepts everything."""
    return True


def prevent_singularities(expr: ExprNode, data: Dataset) -> bool:
    """Hook for singularity screening; currently accepts everything."""
    return True


def instantiate_individual(
    expr: ExprNode,
    data: Dataset,
    opts: Options,
    generation: int,
    rng: np.random.Generator,
) -> Optional[Individual]:
    """Turn an expression into a fitted, measured individual, or ``None``.

    Steps: collapse parameter-only operators, trim to ``max_nodes``, reorder
    commutative operands, check grammar, fit parameters and compute measures,
    run the constraint/singularity hooks, then set the structural attributes.
    """
    expr = remove_redundant_params(expr)
    expr = trim_to_size(expr, opts.max_nodes, rng)
    expr = canonical_reorder(expr)
    if max_variable_index(expr) > data.n_vars or not check_grammar(expr, opts.grammar):
        return None
    fitted = fit_params_lm(expr, data, opts.residual, opts.fit, rng, opts.mutation.parameter_init_range)
    if fitted is None:
        return None
    expr = fitted[0]
    measures = compute_measures(expr, data, opts.residual)
    if measures is None or not constraint_violations(expr, data):
        return None
    if not prevent_singularities(expr, data):
        return None
    return Individual(
        expr=expr,
        measures=measures,
        compl=complexity(expr),
        recursive_compl=recursive_complexity(expr),
        n_params=n_parameters(expr),
        age=0,
        valid=True,
        birth=generation,
    )


def objective_matrix(pop: Sequence[Individual], objectives: Sequence[str]) -> np.ndarray:
    return np.array([[ind.value(o) for o in objectives] for ind in pop], dtype=float).reshape(len(pop), len(objectives))


def dominance_matrix(F: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is True when row ``i`` dominates row ``j`` (minimisation)."""
    le = (F[:, None, :] <= F[None, :, :]).all(axis=2)
    lt = (F[:, None, :] < F[None, :, :]).any(axis=2)
    return le & lt


def crowding_distance(F: np.ndarray) -> np.ndarray:
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = math.inf
        return dist
    for j in range(m):
        order = np.argsort(F[:, j], kind="stable")
        lo, hi = F[order[0], j], F[order[-1], j]
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        dist[order[1:-1]] += (F[order[2:], j] - F[order[:-2], j]) / (hi - lo)
    return dist


def pareto_fronts(F: np.ndarray) -> list[list[int]]:
    """Fast non-dominated sort; each front ordered by descending crowding distance."""
    n = F.shape[0]
    if n == 0:
        return []
    D = dominance_matrix(F)
    dominated_by = D.sum(axis=0)
    fronts = []
    current = np.flatnonzero(dominated_by == 0)
    while current.size:
        crowd = crowding_distance(F[current])
        order = np.argsort(-crowd, kind="stable")
        fronts.append([int(i) for i in current[order]])
        dominated_by = dominated_by - D[current].sum(axis=0)
        dominated_by[current] = -1
        current = np.flatnonzero(dominated_by == 0)
    return fronts


def non_dominated_sort(pop: Sequence[Individual], objectives: Sequence[str]) -> list[list[int]]:
    return pareto_fronts(objective_matrix(pop, objectives))


def _rank_and_crowding(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.zeros(F.shape[0], dtype=int)
    crowd = np.zeros(F.shape[0])
    for r, front in enumerate(pareto_fronts(F)):
        rank[front] = r
        crowd[front] = crowding_distance(F[front])
    return rank, crowd


def tournament_select(
    pool: Sequence[Individual],
    cfg: SelectionConfig,
    count: int,
    rng: np.random.Generator,
    replace: bool = True,
) -> list[Individual]:
    """Run ``count`` tournaments of ``cfg.tournament_size`` contestants.

    The winner has the best non-dominated rank within the pool, then the
    largest crowding distance, then wins a coin toss. With
    ``replace=False`` winners leave the pool.
    """
    if not pool:
        return []
    rank, crowd = _rank_and_crowding(objective_matrix(pool, cfg.tournament_objectives))
    available = list(range(len(pool)))
    winners = []
    for _ in range(count):
        if not available:
            break
        size = min(cfg.tournament_size, len(available))
        picks = rng.choice(len(available), size=size, replace=False)
        contestants = [available[i] for i in picks]
        noise = rng.random(size)
        best = min(range(size), key=lambda i: (rank[contestants[i]], -crowd[contestants[i]], noise[i]))
        winners.append(pool[contestants[best]])
        if not replace:
            available.pop(int(picks[best]))
    return winners


def select_next_generation(island: Island, cfg: SelectionConfig, rng: np.random.Generator) -> Island:
    """Pareto-front selection for ``pareto_ratio`` of the capacity, tournaments for the rest."""
    pop = [ind for ind in island.population if ind.valid]
    if len(pop) <= island.capacity:
        chosen = pop
    else:
        n_pareto = int(round(cfg.pareto_ratio * island.capacity))
        taken: list[int] = []
        if n_pareto:
            for front in non_dominated_sort(pop, cfg.pareto_objectives):
                taken.extend(front[: n_pareto - len(taken)])
                if len(taken) >= n_pareto:
                    break
        chosen_set = set(taken)
        rest = [ind for i, ind in enumerate(pop) if i not in chosen_set]
        chosen = [pop[i] for i in taken]
        chosen += tournament_select(rest, cfg, island.capacity - len(chosen), rng, replace=False)
    survivors = [replace(ind, age=ind.age + 1) for ind in chosen]
    return Island(island.id, survivors, island.capacity)


def migrate(islands: Sequence[Island], rng: np.random.Generator) -> tuple[int, int]:
    """Copy one random individual to a ring neighbour; returns ``(from, to)`` positions.

    Islands form a ring in list order. The emigrant is copied, not moved,
    and the receiving island may exceed capacity until its next selection.
    """
    n = len(islands)
    if n < 2:
        raise ValueError("migration needs at least two islands")
    src = int(rng.integers(n))
    dst = (src + (1 if rng.random() < 0.5 else -1)) % n
    pop = islands[src].population
    if pop:
        emigrant = pop[int(rng.integers(len(pop)))]
        islands[dst].population.append(replace(emigrant))
    return src, dst


class HallOfFame:
    """Non-dominated set of everything seen.

    Members are unique by printed form; of several members with exactly equal
    objective values only the one whose text sorts first is kept.
    """

    def __init__(self, objectives: Sequence[str]):
        self.objectives = tuple(objectives)
        self._members: dict[str, Individual] = {}
        self.generations = 0
        self.islands: list[Island] = []

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self):
        return iter(self.members)

    @property
    def members(self) -> list[Individual]:
        return sorted(self._members.values(), key=lambda i: (i.compl, i.measures.ms_processed_e, i.text))

    def _key(self, ind: Individual) -> tuple:
        return tuple(ind.value(o) for o in self.objectives)

    def update(self, individuals: Iterable[Individual]) -> None:
        merged = dict(self._members)
        for ind in individuals:
            if not ind.valid:
                continue
            old = merged.get(ind.text)
            if old is None or self._key(ind) < self._key(old):
                merged[ind.text] = replace(ind)
        ties: dict[tuple, Individual] = {}
        for ind in sorted(merged.values(), key=lambda i: i.text):
            ties.setdefault(self._key(ind), ind)
        cands = list(ties.values())
        if not cands:
            return
        D = dominance_matrix(objective_matrix(cands, self.objectives))
        keep = ~D.any(axis=0)
        self._members = {c.text: c for c, k in zip(cands, keep) if k}

    def best(self, name: str) -> float:
        return min((ind.value(name) for ind in self._members.values()), default=math.inf)


@dataclass
class RunState:
    """What a generation callback sees."""

    generation: int
    islands: list[Island]
    hall_of_fame: HallOfFame
    elapsed: float
    offspring: list[Individual] = field(default_factory=list)


def check_options(opts: Options, data: Optional[Dataset] = None) -> None:
    opts.validate()
    if data is not None and opts.n_vars != data.n_vars:
        raise ValueError(f"n_vars: options say {opts.n_vars} but the data has {data.n_vars} variables")


def _map(fn: Callable, tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def _make_offspring(gen: int, island: Island, k: int, data: Dataset, opts: Options) -> Optional[Individual]:
    rng = stream(opts.seed, _OFFSPRING, gen, island.id, k)
    pop = island.population
    parent = pop[int(rng.integers(len(pop)))]
    partner = pop[int(rng.integers(len(pop)))].expr
    child = mutate(parent.expr, opts, rng, partner=partner)
    return instantiate_individual(child, data, opts, gen - 1, rng)


def _initial_individual(island_id: int, k: int, expr: Optional[ExprNode], data: Dataset, opts: Options):
    rng = stream(opts.seed, _INIT, island_id, k)
    if expr is None:
        expr = random_expression(opts, rng)
    return instantiate_individual(expr, data, opts, 0, rng)


def initial_islands(opts: Options, data: Dataset, starting: Sequence[ExprNode] = ()) -> list[Island]:
    islands = []
    for i in range(opts.n_islands):
        seeds = [e for j, e in enumerate(starting) if j % opts.n_islands == i]
        pop = [ind for ind in _map(lambda k, e: _initial_individual(i, k, e, data, opts), [(k, e) for k, e in enumerate(seeds)], opts.threads) if ind]
        k = len(seeds)
        max_k = len(seeds) + 20 * opts.island_capacity
        while len(pop) < opts.island_capacity and k < max_k:
            batch = [(kk, None) for kk in range(k, min(k + opts.island_capacity - len(pop), max_k))]
            k += len(batch)
            pop += [ind for ind in _map(lambda kk, e: _initial_individual(i, kk, e, data, opts), batch, opts.threads) if ind]
        if not pop:
            raise RuntimeError(f"island {i}: could not create a single valid individual")
        islands.append(Island(i, pop, opts.island_capacity))
    return islands


def _report(state: RunState) -> None:
    parts = []
    for isl in state.islands:
        if isl.population:
            parts.append(
                "island %d: mse=%.4g mare=%.4g compl=%d"
                % (
                    isl.id,
                    min(i.measures.mse for i in isl.population),
                    min(i.measures.mare for i in isl.population),
                    min(i.compl for i in isl.population),
                )
            )
    log.info("gen %d | %s | %.1fs", state.generation, " | ".join(parts), state.elapsed)


def run(
    opts: Options,
    data: Dataset,
    starting_expressions: Sequence[ExprNode | str] = (),
    callback: Optional[Callable[[RunState], None]] = None,
) -> HallOfFame:
    """Evolve ``opts.n_islands`` islands on ``data`` and return the hall of fame.

    Each generation, every island breeds ``opts.n_offspring`` children from
    uniformly drawn parents, keeps parents and valid children together and
    selects back down to capacity. Every ``migration_interval`` generations
    one individual is copied to a ring neighbour. Stops at ``generations``,
    ``time_limit`` seconds, or when the hall of fame reaches
    ``target_threshold`` in ``target_measure``.
    """
    check_options(opts, data)
    starting = [parse(s) if isinstance(s, str) else s for s in starting_expressions]
    t0 = time.perf_counter()
    hof = HallOfFame(opts.selection.pareto_objectives)
    islands = initial_islands(opts, data, starting)
    hof.update(ind for isl in islands for ind in isl.population)
    state = RunState(0, islands, hof, time.perf_counter() - t0)
    if callback:
        callback(state)

    def done() -> bool:
        if opts.target_threshold is not None and hof.best(opts.target_measure) <= opts.target_threshold:
            return True
        return opts.time_limit is not None and time.perf_counter() - t0 >= opts.time_limit

    gen = 0
    while gen < opts.generations and not done():
        gen += 1
        tasks = [(gen, isl, k, data, opts) for isl in islands for k in range(opts.n_offspring)]
        children = _map(_make_offspring, tasks, opts.threads)
        new_islands = []
        offspring = []
        for isl in islands:
            kids = [c for (g, i, k, _, _), c in zip(tasks, children) if i is isl and c is not None]
            offspring += kids
            pool = Island(isl.id, isl.population + kids, isl.capacity)
            new_islands.append(select_next_generation(pool, opts.selection, stream(opts.seed, _SELECT, gen, isl.id)))
        islands = new_islands
        hof.update(offspring)
        if len(islands) > 1 and gen % opts.migration_interval == 0:
            migrate(islands, stream(opts.seed, _MIGRATE, gen))
        state = RunState(gen, islands, hof, time.perf_counter() - t0, offspring)
        if gen % opts.report_interval == 0:
            _report(state)
        if callback:
            callback(state)
    hof.generations = gen
    hof.islands = islands
    return hof
