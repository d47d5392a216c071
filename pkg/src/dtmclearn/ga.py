"""Genetic search over node-to-state mappings of the frequency prefix tree."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import NEG_INF, Dtmc, make_rng, trie_log_likelihood
from .traces import PrefixTree, TraceSet, build_prefix_tree

SELECTIONS = ("tournament", "roulette")
CROSSOVERS = ("one", "two", "uniform")


@dataclass(frozen=True)
class GaParams:
    population: int = 64
    generations: int = 50
    tournament_p: float = 0.75
    crossover: str = "two"
    selection: str = "tournament"
    # None: 1/X per gene for the multi-trace GA, one flip per child for the single-trace GA
    mutation_rate: float | None = None
    mu: float = 0.5
    seed: int = 0
    workers: int = 1
    max_z: int | None = None
    # probability that a multi-trace child also gets a block mutation
    block_rate: float = 0.5

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population size must be >= 2")
        if self.generations < 1:
            raise ValueError("need at least one generation")
        if not 0.5 < self.tournament_p <= 1:
            raise ValueError("tournament probability must lie in (0.5, 1]")
        if self.mutation_rate is not None and not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation rate must lie in [0, 1]")
        if not 0 <= self.block_rate <= 1:
            raise ValueError("block mutation rate must lie in [0, 1]")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.crossover not in CROSSOVERS:
            raise ValueError(f"crossover must be one of {CROSSOVERS}")


# -- generic operators, shared with the single-execution GA -----------------


def select(fitness: Sequence[float], strategy: str, rng: np.random.Generator, p: float = 0.75) -> np.ndarray:
    """Indices of the mating pool, one draw per population slot.

    Roulette shifts finite fitness by ``min - 1`` so every weight is at
    least 1; ``-inf`` individuals get weight 0 unless nothing is finite.
    Tournament picks two distinct individuals and keeps the fitter one
    when a uniform draw is below ``p``.
    """
    f = np.asarray(fitness, dtype=np.float64)
    n = f.size
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if strategy == "roulette":
        finite = np.isfinite(f)
        if not finite.any():
            w = np.ones(n)
        else:
            w = np.where(finite, f - (f[finite].min() - 1.0), 0.0)
        return rng.choice(n, size=n, p=w / w.sum())
    if strategy == "tournament":
        first = rng.integers(n, size=n)
        second = (first + rng.integers(1, n, size=n)) % n
        r = rng.random(n)
        first_fitter = f[first] >= f[second]
        better = np.where(first_fitter, first, second)
        worse = np.where(first_fitter, second, first)
        return np.where(r < p, better, worse)
    raise ValueError(f"unknown selection strategy {strategy!r}")


def one_point(p1: np.ndarray, p2: np.ndarray, cut: int):
    return np.concatenate([p1[:cut], p2[cut:]]), np.concatenate([p2[:cut], p1[cut:]])


def two_point(p1: np.ndarray, p2: np.ndarray, lo: int, hi: int):
    c1, c2 = p1.copy(), p2.copy()
    c1[lo:hi], c2[lo:hi] = p2[lo:hi], p1[lo:hi]
    return c1, c2


def uniform(p1: np.ndarray, p2: np.ndarray):
    """Child 1 takes odd positions (1-based) from ``p1`` and even ones from ``p2``."""
    c1, c2 = p1.copy(), p2.copy()
    c1[1::2], c2[1::2] = p2[1::2], p1[1::2]
    return c1, c2


def crossover_genes(p1: np.ndarray, p2: np.ndarray, strategy: str, rng: np.random.Generator):
    if p1.shape != p2.shape:
        raise ValueError("parents have different lengths")
    x = p1.size
    if strategy == "one":
        return one_point(p1, p2, int(rng.integers(1, x)) if x > 1 else 0)
    if strategy == "two":
        if x < 3:
            return one_point(p1, p2, x // 2)
        lo, hi = np.sort(rng.choice(np.arange(1, x), size=2, replace=False))
        return two_point(p1, p2, int(lo), int(hi))
    if strategy == "uniform":
        return uniform(p1, p2)
    raise ValueError(f"unknown crossover strategy {strategy!r}")


# -- chromosome layout ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GroupPartition:
    """Non-root tree nodes grouped by last symbol.

    Gene ``i`` belongs to tree node ``i + 1``.
    """

    group_of: np.ndarray
    symbols: np.ndarray
    sizes: np.ndarray
    # gene index of each node's parent, -1 under the root
    parent: np.ndarray

    @classmethod
    def from_tree(cls, tree: PrefixTree) -> "GroupPartition":
        sym = tree.symbol[1:]
        symbols, group_of, sizes = np.unique(sym, return_inverse=True, return_counts=True)
        return cls(group_of.astype(np.int64), symbols, sizes, tree.parent[1:] - 1)

    def __len__(self):
        return self.symbols.size


@dataclass(frozen=True, eq=False)
class Layout:
    """State-id ranges per group for a state budget ``z``.

    Group ``g`` owns ids ``offsets[g] + 1 .. offsets[g] + widths[g]``.
    Widths are at least 1, never exceed the group's node count, and sum to
    at most ``z``.
    """

    partition: GroupPartition
    z: int
    widths: np.ndarray
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        widths = np.asarray(self.widths, dtype=np.int64)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(widths)[:-1]]))

    @classmethod
    def for_budget(cls, partition: GroupPartition, z: int) -> "Layout":
        """Every group gets one id; the ``z - groups`` extra ids go round-robin
        to groups in order of decreasing size, never exceeding a group's node count.
        """
        _check_budget(partition, z)
        widths = np.ones(len(partition), dtype=np.int64)
        order = sorted(range(len(partition)), key=lambda i: (-partition.sizes[i], i))
        extra = z - len(partition)
        while extra > 0:
            progressed = False
            for i in order:
                if extra == 0:
                    break
                if widths[i] < partition.sizes[i]:
                    widths[i] += 1
                    extra -= 1
                    progressed = True
            if not progressed:
                break
        return cls(partition, z, widths)

    @classmethod
    def random(cls, partition: GroupPartition, z: int, rng: np.random.Generator) -> "Layout":
        """Extra ids handed one at a time to a uniformly chosen group with room left."""
        _check_budget(partition, z)
        widths = np.ones(len(partition), dtype=np.int64)
        for _ in range(z - len(partition)):
            room = np.flatnonzero(widths < partition.sizes)
            if not room.size:
                break
            widths[room[rng.integers(room.size)]] += 1
        return cls(partition, z, widths)

    def rebudget(self, z: int, widen: int | None = None) -> "Layout":
        """Same ranges under budget ``z``, optionally with one more id for group ``widen``."""
        widths = self.widths.copy()
        if widen is not None:
            widths[widen] += 1
        return Layout(self.partition, z, widths)

    @property
    def gene_widths(self) -> np.ndarray:
        return self.widths[self.partition.group_of]


def _check_budget(partition: GroupPartition, z: int) -> None:
    if z < len(partition):
        raise ValueError(f"state budget {z} below the {len(partition)} used symbols")


@dataclass(frozen=True, eq=False)
class ChromosomeM:
    """Local state index per gene; the global id is ``offset(group) + local + 1``.

    Each chromosome carries its own layout, so individuals of one budget
    may spend their extra ids on different groups.
    """

    genes: np.ndarray
    layout: Layout

    def state_ids(self) -> np.ndarray:
        return self.layout.offsets[self.layout.partition.group_of] + self.genes + 1

    def key(self) -> bytes:
        return self.layout.widths.tobytes() + self.genes.tobytes()


def chromosome_violations(c: ChromosomeM) -> list[str]:
    """Check the encoding from the global ids alone."""
    layout = c.layout
    ids = c.state_ids()
    group_of = layout.partition.group_of
    problems = []
    if ids.shape != group_of.shape:
        return [f"{ids.size} genes for {group_of.size} nodes"]
    if int(layout.widths.sum()) > layout.z:
        problems.append(f"layout uses {int(layout.widths.sum())} ids for budget {layout.z}")
    if ids.size and (ids.min() < 1 or ids.max() > layout.z):
        problems.append(f"state id outside 1..{layout.z}")
    lo = layout.offsets[group_of] + 1
    hi = layout.offsets[group_of] + layout.widths[group_of]
    for i in np.flatnonzero((ids < lo) | (ids > hi)):
        problems.append(f"gene {i} id {ids[i]} outside its group's range")
    owner: dict[int, int] = {}
    for sid, g in zip(ids.tolist(), group_of.tolist()):
        if owner.setdefault(sid, g) != g:
            problems.append(f"state id {sid} shared by groups {owner[sid]} and {g}")
            break
    return problems


def is_valid(c: ChromosomeM) -> bool:
    return not chromosome_violations(c)


def all_merged(layout: Layout) -> ChromosomeM:
    return ChromosomeM(np.zeros(layout.partition.group_of.size, dtype=np.int64), layout)


def random_chromosome(layout: Layout, rng: np.random.Generator) -> ChromosomeM:
    genes = (rng.random(layout.partition.group_of.size) * layout.gene_widths).astype(np.int64)
    return ChromosomeM(genes, layout)


def init_population(
    tree: PrefixTree,
    z: int,
    params: GaParams,
    rng: np.random.Generator,
    seed_with: ChromosomeM | None = None,
) -> list[ChromosomeM]:
    """Random chromosomes for state budget ``z``.

    The all-merged chromosome is always first. ``seed_with`` (the best
    chromosome of a smaller budget) is carried over; mutated copies that
    open one more id in some group fill a quarter of the population.
    """
    return _init_population(GroupPartition.from_tree(tree), z, params, rng, seed_with)


def _init_population(partition, z, params: GaParams, rng, seed_with=None) -> list[ChromosomeM]:
    pop = [all_merged(Layout.for_budget(partition, z))]
    if seed_with is not None:
        base = seed_with.layout
        pop.append(ChromosomeM(seed_with.genes, base.rebudget(z)))
        room = [g for g in range(len(partition)) if base.widths[g] < partition.sizes[g]]
        if int(base.widths.sum()) < z and room:
            k = 0
            while len(pop) < max(2, params.population // 4):
                g = room[k % len(room)]
                pop.append(_split_mutation(ChromosomeM(seed_with.genes, base.rebudget(z, g)), g, rng))
                k += 1
    while len(pop) < params.population:
        pop.append(random_chromosome(Layout.random(partition, z, rng), rng))
    return pop[: params.population]


def _split_mutation(c: ChromosomeM, g: int, rng) -> ChromosomeM:
    """Move a random share of group ``g``'s nodes to its newest id."""
    members = np.flatnonzero(c.layout.partition.group_of == g)
    share = rng.random()
    moved = members[rng.random(members.size) < share]
    genes = c.genes.copy()
    genes[moved] = c.layout.widths[g] - 1
    return ChromosomeM(genes, c.layout)


# -- decode and fitness -------------------------------------------------------


def decode(tree: PrefixTree, c: ChromosomeM) -> Dtmc:
    """DTMC whose states are the groups of nodes sharing a state id.

    Transition mass from state s to s' is the count of one-symbol extensions
    of nodes of s that land in s'; rows are normalized over that emitted
    mass (stop mass dropped) and a state without extensions loops on
    itself. The initial distribution is the first-symbol frequency.
    Unused ids are dropped.
    """
    ids = c.state_ids()
    used, compact = np.unique(ids, return_inverse=True)
    n = used.size
    state = np.concatenate([[-1], compact])
    parent = tree.parent
    counts = tree.counts.astype(np.float64)

    inner = np.flatnonzero(parent > 0)
    keys = state[parent[inner]] * n + state[inner]
    mass = np.bincount(keys, weights=counts[inner], minlength=n * n).reshape(n, n)
    rowsum = mass.sum(axis=1)
    empty = rowsum == 0
    idle = np.flatnonzero(empty)
    mass[idle, idle] = 1.0
    rowsum[empty] = 1.0
    trans = mass / rowsum[:, None]

    first = np.flatnonzero(parent == 0)
    init = np.bincount(state[first], weights=counts[first], minlength=n)
    init /= init.sum()

    label_of_state = np.empty(n, dtype=np.int64)
    label_of_state[compact] = tree.symbol[1:]
    return Dtmc(tree.alphabet, init, trans, label_of_state)


def score_model(model: Dtmc, tree: PrefixTree, mu: float) -> float:
    ll = trie_log_likelihood(model, tree.trie)
    if ll == NEG_INF:
        return NEG_INF
    return ll - mu * model.n * math.log(tree.n_letters)


def fitness(tree: PrefixTree, c: ChromosomeM, mu: float = 0.5) -> float:
    """``ln Pr_M(Pi) - mu * |M| * ln(total letters)`` for the decoded model."""
    return score_model(decode(tree, c), tree, mu)


def crossover(p1: ChromosomeM, p2: ChromosomeM, strategy: str, rng: np.random.Generator):
    """Exchange genes; child 1 keeps ``p1``'s layout and child 2 ``p2``'s.

    A gene taken from a parent whose group has more ids is folded back
    into the child's range by taking it modulo the child's width.
    """
    if p1.layout.partition is not p2.layout.partition or p1.layout.z != p2.layout.z:
        raise ValueError("parents belong to different trees or budgets")
    g1, g2 = crossover_genes(p1.genes, p2.genes, strategy, rng)
    return ChromosomeM(g1 % p1.layout.gene_widths, p1.layout), ChromosomeM(g2 % p2.layout.gene_widths, p2.layout)


def mutate(c: ChromosomeM, rate: float, rng: np.random.Generator) -> ChromosomeM:
    """Re-draw each gene with probability ``rate`` to another id of its group."""
    widths = c.layout.gene_widths
    hit = (rng.random(c.genes.size) < rate) & (widths > 1)
    genes = c.genes.copy()
    if hit.any():
        draw = (rng.random(int(hit.sum())) * (widths[hit] - 1)).astype(np.int64)
        genes[hit] = draw + (draw >= genes[hit])
    return ChromosomeM(genes, c.layout)


def mutate_block(c: ChromosomeM, rng: np.random.Generator) -> ChromosomeM:
    """Move a whole context class to another id of its group.

    A random node is picked among groups with more than one id; every node
    of the same group that shares its current id and whose parent shares
    its parent's id is re-mapped to one new id. This splits or re-routes a
    state along one incoming transition, which single-gene moves reach
    only by chance.
    """
    part = c.layout.partition
    widths = c.layout.gene_widths
    movable = np.flatnonzero(widths > 1)
    if not movable.size:
        return c
    i = movable[rng.integers(movable.size)]
    ids = c.state_ids()
    parent_ids = np.where(part.parent >= 0, ids[np.maximum(part.parent, 0)], 0)
    block = (ids == ids[i]) & (parent_ids == parent_ids[i])
    draw = int(rng.integers(widths[i] - 1))
    genes = c.genes.copy()
    genes[block] = draw + (draw >= genes[i])
    return ChromosomeM(genes, c.layout)


# -- main loop --------------------------------------------------------------


@dataclass
class GaResult:
    model: Dtmc
    chromosome: object
    fitness: float
    # (z, generation, best fitness so far, states of the best model)
    history: list[tuple[int, int, float, int]]


class _Evaluator:
    """Memoized, optionally threaded fitness evaluation; order-independent."""

    def __init__(self, fn: Callable, workers: int):
        self.fn = fn
        self.cache: dict = {}
        self.workers = workers

    def __call__(self, population, key) -> np.ndarray:
        todo = {}
        for c in population:
            k = key(c)
            if k not in self.cache and k not in todo:
                todo[k] = c
        if todo:
            items = list(todo.items())
            if self.workers > 1 and len(items) > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    values = list(pool.map(lambda kv: self.fn(kv[1]), items))
            else:
                values = [self.fn(c) for _, c in items]
            for (k, _), v in zip(items, values):
                self.cache[k] = v
        return np.array([self.cache[key(c)] for c in population])


def breed(population, fits, params: GaParams, rng_for, crossover_fn, mutate_fn, observer=None):
    """One round of selection, pairwise crossover in pool order, and mutation.

    ``rng_for(k)`` gives the generator for pair ``k`` (0 is used for selection).
    """
    pool = select(fits, params.selection, rng_for(0), params.tournament_p)
    children = []
    for k in range(0, len(pool) - 1, 2):
        rng = rng_for(k // 2 + 1)
        c1, c2 = crossover_fn(population[pool[k]], population[pool[k + 1]], rng)
        if observer:
            observer("crossover", c1)
            observer("crossover", c2)
        for c in (c1, c2):
            child = mutate_fn(c, rng)
            if observer:
                observer("mutation", child)
            children.append(child)
    if len(pool) % 2:
        rng = rng_for(len(pool) // 2 + 1)
        child = mutate_fn(population[pool[-1]], rng)
        if observer:
            observer("mutation", child)
        children.append(child)
    return children


def _mutate_child(c: ChromosomeM, rate: float, block_rate: float, rng) -> ChromosomeM:
    c = mutate(c, rate, rng)
    if rng.random() < block_rate:
        c = mutate_block(c, rng)
    return c


def run_ga(pi: TraceSet | PrefixTree, params: GaParams = GaParams(), observer=None) -> GaResult:
    """Evolve node-to-state mappings, growing the state budget until the best
    fitness stops improving.

    ``observer(stage, chromosome)`` is called for every chromosome created.
    """
    tree = pi if isinstance(pi, PrefixTree) else build_prefix_tree(pi)
    partition = GroupPartition.from_tree(tree)
    x = partition.group_of.size
    rate = params.mutation_rate if params.mutation_rate is not None else 1.0 / x

    evaluate = _Evaluator(lambda c: fitness(tree, c, params.mu), params.workers)
    best, best_fit = None, NEG_INF
    best_states = 0
    history = []
    z = len(partition)
    while params.max_z is None or z <= params.max_z:
        if z > x:
            break
        population = _init_population(partition, z, params, make_rng(params.seed, z, 0, 0), best)
        if observer:
            for c in population:
                observer("init", c)
        improved = False
        for gen in range(1, params.generations + 1):
            fits = evaluate(population, key=lambda c: c.key())
            i = int(np.argmax(fits))
            if fits[i] > best_fit:
                best, best_fit = population[i], float(fits[i])
                best_states = decode(tree, best).n
                improved = True
            history.append((z, gen, best_fit, best_states))
            if gen < params.generations:
                population = breed(
                    population,
                    fits,
                    params,
                    lambda k, g=gen: make_rng(params.seed, z, g, k),
                    lambda a, b, rng: crossover(a, b, params.crossover, rng),
                    lambda c, rng: _mutate_child(c, rate, params.block_rate, rng),
                    observer,
                )
        if not improved:
            break
        z += 1
    return GaResult(decode(tree, best), best, best_fit, history)


def learn_ga(pi: TraceSet | PrefixTree, params: GaParams = GaParams()) -> Dtmc:
    return run_ga(pi, params).model


def write_progress_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z", "generation", "best_fitness", "best_states"])
        for z, gen, fit, states in history:
            w.writerow([z, gen, repr(fit), states])
