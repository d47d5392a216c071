"""Learning from one long execution: suffix-tree growth, the tree-to-chain
construction, and a genetic search over context selections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse

from .ga import GaParams, GaResult, _Evaluator, breed, crossover_genes
from .model import NEG_INF, Alphabet, Dtmc, log_string_probability, make_rng
from .traces import SuffixStats, Trace

DEFAULT_MAX_DEPTH = 8


@dataclass(frozen=True, eq=False)
class Pst:
    """A suffix-closed set of contexts over one execution.

    ``contexts`` always contains the root ``()`` and is kept in
    length-then-alphabet order.
    """

    contexts: tuple[Trace, ...]
    stats: SuffixStats

    def __post_init__(self):
        idx = self.alphabet.index
        ordered = tuple(sorted(set(self.contexts) | {()}, key=lambda c: (len(c), [idx[s] for s in c])))
        object.__setattr__(self, "contexts", ordered)

    @property
    def alphabet(self) -> Alphabet:
        return self.stats.alphabet

    def __contains__(self, ctx) -> bool:
        return tuple(ctx) in self._members

    def __len__(self):
        return len(self.contexts)

    @cached_property
    def _members(self) -> frozenset:
        return frozenset(self.contexts)

    def is_suffix_closed(self) -> bool:
        return all(c[i:] in self._members for c in self.contexts for i in range(1, len(c) + 1))

    def longest_suffix(self, ctx: Sequence[str]) -> Trace:
        """Longest suffix of ``ctx`` (possibly itself) that is a context."""
        ctx = tuple(ctx)
        for i in range(len(ctx) + 1):
            if ctx[i:] in self._members:
                return ctx[i:]
        return ()

    def next_dist(self, ctx: Sequence[str]) -> np.ndarray:
        """Next-symbol probabilities of ``ctx`` in alphabet order."""
        ctx = tuple(ctx)
        total = self.stats.count(ctx)
        if total <= 0:
            return np.zeros(len(self.alphabet))
        return np.array([self.stats.count(ctx + (e,)) for e in self.alphabet.symbols], dtype=np.float64) / total

    def dumps(self) -> str:
        lines = []
        for ctx in self.contexts:
            dist = self.next_dist(ctx)
            probs = " ".join(f"{e}:{float(p)!r}" for e, p in zip(self.alphabet.symbols, dist) if p > 0)
            lines.append(f"{' '.join(ctx)} | {probs}".strip())
        return "\n".join(lines) + "\n"


def kl_gain(stats: SuffixStats, ctx: Trace, shorter: Trace) -> float:
    """``fre(ctx) * sum_s P(ctx, s) ln(P(ctx, s) / P(shorter, s))``.

    Terms with ``P(ctx, s) = 0`` contribute 0; a positive ``P(ctx, s)`` with
    ``P(shorter, s) = 0`` makes the gain infinite.
    """
    n_ctx, n_short = stats.count(ctx), stats.count(shorter)
    if n_ctx <= 0:
        return 0.0
    total = 0.0
    for e in stats.alphabet.symbols:
        a = stats.count(ctx + (e,))
        if a == 0:
            continue
        b = stats.count(shorter + (e,))
        if b == 0:
            return math.inf
        p = a / n_ctx
        total += p * math.log(p / (b / n_short))
    return _fre(stats, ctx) * total


def _fre(stats: SuffixStats, ctx: Trace) -> float:
    """Relative frequency, or 0 where the denominator is not positive."""
    if len(stats) - len(ctx) - 1 <= 0:
        return 0.0
    return stats.fre(ctx)


def learn_pst(
    alpha: Sequence[str] | SuffixStats,
    eps: float,
    max_depth: int = DEFAULT_MAX_DEPTH,
    rng: np.random.Generator | None = None,
) -> Pst:
    """Grow a context tree from single symbols outward.

    A candidate is added (with its missing suffixes) when its gain over the
    longest context already in the tree reaches ``eps``; candidates with
    frequency above ``eps`` are extended one symbol to the left while
    shorter than ``max_depth``. Candidates are processed one length at a
    time, each judged against the tree as it stood when that length began,
    so the order within a length is irrelevant (``rng`` shuffles it, for
    testing that claim).
    """
    stats = alpha if isinstance(alpha, SuffixStats) else SuffixStats(alpha)
    if len(stats) < 3:
        raise ValueError("execution must have at least 3 observations")
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    tree: set[Trace] = {()}
    level = [(e,) for e in stats.alphabet.symbols if _fre(stats, (e,)) > eps]

    def longest_in_tree(ctx):
        for i in range(1, len(ctx) + 1):
            if ctx[i:] in tree:
                return ctx[i:]
        return ()

    while level:
        if rng is not None:
            level = [level[i] for i in rng.permutation(len(level))]
        following, grown = [], []
        for pi in level:
            if kl_gain(stats, pi, longest_in_tree(pi)) >= eps:
                grown.append(pi)
            if _fre(stats, pi) > eps and len(pi) < max_depth:
                following.extend((e,) + pi for e in stats.alphabet.symbols if stats.count((e,) + pi) > 0)
        for pi in grown:
            tree.update(pi[i:] for i in range(len(pi)))
        level = following
    return Pst(tuple(tree), stats)


def pst_to_dtmc(t: Pst) -> Dtmc:
    """Chain whose states are the non-root contexts plus every observed single symbol.

    A state predicts with its own distribution when it is a context and
    with its longest context suffix otherwise (so added single symbols use
    the root's unigram distribution). On symbol ``s`` state ``u`` moves to
    the longest suffix of ``u + (s,)`` that is a state. Rows are normalized
    over observed successors; a context seen only at the very end of the
    execution loops on itself. The initial distribution is the unigram
    distribution over single-symbol states.
    """
    stats = t.stats
    symbols = t.alphabet.symbols
    singles = [(e,) for e in symbols if stats.count((e,)) > 0]
    states = [c for c in t.contexts if c] + [s for s in singles if s not in t]
    idx = t.alphabet.index
    states.sort(key=lambda c: (len(c), [idx[s] for s in c]))
    pos = {c: i for i, c in enumerate(states)}

    rows, cols, vals = [], [], []
    for i, u in enumerate(states):
        dist = t.next_dist(t.longest_suffix(u))
        total = dist.sum()
        if total <= 0:
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            continue
        for k in np.flatnonzero(dist):
            ext = u + (symbols[k],)
            j = next(pos[ext[m:]] for m in range(len(ext)) if ext[m:] in pos)
            rows.append(i)
            cols.append(j)
            vals.append(dist[k] / total)
    n = len(states)
    trans = sparse.csr_array((vals, (rows, cols)), shape=(n, n))
    init = np.zeros(n)
    for s in singles:
        init[pos[s]] = stats.count(s) / len(stats)
    labels = [idx[c[-1]] for c in states]
    return Dtmc(t.alphabet, init, trans, labels)


def learn_pst_dtmc(alpha: Sequence[str], eps: float, max_depth: int = DEFAULT_MAX_DEPTH) -> Dtmc:
    return pst_to_dtmc(learn_pst(alpha, eps, max_depth))


# -- genetic search over context selections ---------------------------------


class ContextUniverse:
    """Candidate contexts for the boolean encoding: every substring of the
    execution of length 1..``max_depth``, shortest first in alphabet order.
    """

    def __init__(self, alpha: Sequence[str] | SuffixStats, max_depth: int = DEFAULT_MAX_DEPTH):
        self.stats = alpha if isinstance(alpha, SuffixStats) else SuffixStats(alpha)
        if max_depth < 1:
            raise ValueError("max depth must be >= 1")
        self.max_depth = max_depth
        idx = self.stats.alphabet.index
        nodes: list[Trace] = []
        for k in range(1, min(max_depth, len(self.stats)) + 1):
            nodes.extend(sorted(self.stats.counts_of_length(k), key=lambda c: [idx[s] for s in c]))
        self.nodes = nodes
        self.index = {c: i for i, c in enumerate(nodes)}
        self.length = np.array([len(c) for c in nodes], dtype=np.int64)
        # gene indices of each node's proper non-empty suffixes
        self.suffixes = [[self.index[c[i:]] for i in range(1, len(c))] for c in nodes]
        self.by_length = [np.flatnonzero(self.length == k) for k in range(1, max_depth + 1)]
        self.by_length = [g for g in self.by_length if g.size]

    def __len__(self):
        return len(self.nodes)

    @property
    def alpha(self) -> Trace:
        return self.stats.alpha


@dataclass(frozen=True, eq=False)
class ChromosomeS:
    genes: np.ndarray
    universe: ContextUniverse

    def selected(self) -> list[Trace]:
        return [self.universe.nodes[i] for i in np.flatnonzero(self.genes)]

    def key(self) -> bytes:
        return np.packbits(self.genes).tobytes()


def single_violations(c: ChromosomeS) -> list[str]:
    u = c.universe
    problems = []
    if c.genes.shape != (len(u),):
        return [f"{c.genes.size} genes for {len(u)} candidate contexts"]
    for i in np.flatnonzero(c.genes):
        for j in u.suffixes[i]:
            if c.genes[j]:
                problems.append(f"{u.nodes[i]} selected together with its suffix {u.nodes[j]}")
    return problems


def is_valid_single(c: ChromosomeS) -> bool:
    return not single_violations(c)


def repair_single(genes: np.ndarray, universe: ContextUniverse) -> np.ndarray:
    """Longest context wins: scanning by decreasing length, each selected
    context clears its suffixes."""
    genes = genes.copy()
    on = np.flatnonzero(genes)
    for i in on[np.argsort(-universe.length[on], kind="stable")]:
        if genes[i]:
            genes[universe.suffixes[i]] = False
    return genes


def decode_single(c: ChromosomeS) -> Pst:
    """The selected contexts with their suffixes, plus the root."""
    ctxs = set()
    for ctx in c.selected():
        for i in range(len(ctx)):
            ctxs.add(ctx[i:])
    return Pst(tuple(ctxs), c.universe.stats)


def fitness_single(alpha: Sequence[str], c: ChromosomeS, mu: float = 0.5) -> float:
    """``ln Pr_M(alpha) - mu * |M| * ln|alpha|`` for the decoded chain."""
    model = pst_to_dtmc(decode_single(c))
    ll = log_string_probability(model, tuple(alpha))
    if ll == NEG_INF:
        return NEG_INF
    return ll - mu * model.n * math.log(len(alpha))


def _pick_gene(universe: ContextUniverse, rng) -> int:
    """Uniform context length first, then a uniform context of that length."""
    group = universe.by_length[int(rng.integers(len(universe.by_length)))]
    return int(group[rng.integers(group.size)])


def mutate_single(c: ChromosomeS, rng: np.random.Generator) -> ChromosomeS:
    """Flip one gene. A context switched on clears its suffixes and any
    selected longer context ending in it, keeping the chromosome valid."""
    u = c.universe
    i = _pick_gene(u, rng)
    genes = c.genes.copy()
    genes[i] = not genes[i]
    if genes[i]:
        genes[u.suffixes[i]] = False
        for j in np.flatnonzero(genes):
            if j != i and i in u.suffixes[j]:
                genes[j] = False
    return ChromosomeS(genes, u)


def crossover_single(p1: ChromosomeS, p2: ChromosomeS, strategy: str, rng):
    if p1.universe is not p2.universe:
        raise ValueError("parents use different candidate sets")
    g1, g2 = crossover_genes(p1.genes, p2.genes, strategy, rng)
    return ChromosomeS(repair_single(g1, p1.universe), p1.universe), ChromosomeS(repair_single(g2, p1.universe), p1.universe)


def init_population_single(universe: ContextUniverse, params: GaParams, rng) -> list[ChromosomeS]:
    """The root-only chromosome plus random ones built from a few flips each."""
    empty = ChromosomeS(np.zeros(len(universe), dtype=bool), universe)
    pop = [empty]
    flips = max(2, len(universe.stats.alphabet))
    while len(pop) < params.population:
        c = empty
        for _ in range(int(rng.integers(1, flips + 1))):
            c = mutate_single(c, rng)
        pop.append(c)
    return pop


def run_ga_single(
    alpha: Sequence[str],
    params: GaParams = GaParams(),
    max_depth: int = DEFAULT_MAX_DEPTH,
    observer=None,
) -> GaResult:
    """Evolve context selections for a fixed number of generations.

    ``params.mutation_rate`` is the chance that a child gets its flip
    (every child by default).
    """
    alpha = tuple(alpha)
    if len(alpha) < 3:
        raise ValueError("execution must have at least 3 observations")
    universe = ContextUniverse(alpha, max_depth)
    rate = 1.0 if params.mutation_rate is None else params.mutation_rate

    def mutate_fn(c, rng):
        return mutate_single(c, rng) if rng.random() < rate else c

    evaluate = _Evaluator(lambda c: fitness_single(alpha, c, params.mu), params.workers)
    population = init_population_single(universe, params, make_rng(params.seed, 0, 0, 0))
    if observer:
        for c in population:
            observer("init", c)
    best, best_fit, best_states = None, NEG_INF, 0
    history = []
    for gen in range(1, params.generations + 1):
        fits = evaluate(population, key=lambda c: c.key())
        i = int(np.argmax(fits))
        if best is None or fits[i] > best_fit:
            best, best_fit = population[i], float(fits[i])
            best_states = pst_to_dtmc(decode_single(best)).n
        history.append((0, gen, best_fit, best_states))
        if gen < params.generations:
            population = breed(
                population,
                fits,
                params,
                lambda k, g=gen: make_rng(params.seed, 0, g, k),
                lambda a, b, rng: crossover_single(a, b, params.crossover, rng),
                mutate_fn,
                observer,
            )
    return GaResult(pst_to_dtmc(decode_single(best)), best, best_fit, history)


def learn_ga_single(alpha: Sequence[str], params: GaParams = GaParams(), max_depth: int = DEFAULT_MAX_DEPTH) -> Dtmc:
    return run_ga_single(alpha, params, max_depth).model
