"""Labeled discrete-time Markov chains and exact computations on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

NEG_INF = float("-inf")

ROW_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``(seed, stream...)``; equal arguments give equal draws."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        if not symbols:
            raise ValueError("alphabet must not be empty")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"duplicate symbols in alphabet: {symbols}")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "index", {s: i for i, s in enumerate(symbols)})

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, sym):
        return sym in self.index

    def __getitem__(self, i):
        return self.symbols[i]

    def encode(self, word: Sequence[str]) -> list[int] | None:
        """Symbol ids of ``word``, or None if it uses a foreign symbol."""
        try:
            return [self.index[s] for s in word]
        except KeyError:
            return None


@dataclass(frozen=True, eq=False)
class Dtmc:
    """A finite DTMC ``(S, init, Tr)`` with one label per state.

    ``trans`` is kept as a CSR sparse matrix: learned models can have as many
    states as the prefix tree has nodes.
    """

    alphabet: Alphabet
    init: np.ndarray
    trans: sparse.csr_array
    labels: np.ndarray

    def __post_init__(self):
        alphabet = self.alphabet if isinstance(self.alphabet, Alphabet) else Alphabet(tuple(self.alphabet))
        trans = sparse.csr_array(self.trans, dtype=np.float64)
        trans.sum_duplicates()
        trans.sort_indices()
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "init", np.asarray(self.init, dtype=np.float64).copy())
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).copy())

    @property
    def n(self) -> int:
        return self.init.shape[0]

    def label_of(self, state: int) -> str:
        return self.alphabet[int(self.labels[state])]

    def dense(self) -> np.ndarray:
        return self.trans.toarray()

    def label_mask(self, symbols: Iterable[str]) -> np.ndarray:
        """Boolean vector of states whose label is in ``symbols``."""
        ids = [self.alphabet.index[s] for s in symbols if s in self.alphabet]
        return np.isin(self.labels, ids)

    @cached_property
    def successor_table(self):
        """``(init_state, init_prob, succ, prob)`` if every (state, symbol)
        pair has at most one positive successor, else None.

        Lookups are indexed by symbol id; missing entries hold -1 / 0.0.
        """
        k = len(self.alphabet)
        coo = self.trans.tocoo()
        keep = coo.data > 0
        rows, cols, data = coo.row[keep], coo.col[keep], coo.data[keep]
        keys = rows.astype(np.int64) * k + self.labels[cols]
        if np.unique(keys).size != keys.size:
            return None
        support = np.flatnonzero(self.init > 0)
        init_keys = self.labels[support]
        if np.unique(init_keys).size != init_keys.size:
            return None
        init_state = np.full(k, -1, dtype=np.int64)
        init_prob = np.zeros(k)
        init_state[init_keys] = support
        init_prob[init_keys] = self.init[support]
        succ = np.full(self.n * k, -1, dtype=np.int64)
        prob = np.zeros(self.n * k)
        succ[keys] = cols
        prob[keys] = data
        return init_state, init_prob, succ.reshape(self.n, k), prob.reshape(self.n, k)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_dtmc(d: Dtmc, tol: float = ROW_TOL) -> ValidationReport:
    report = ValidationReport()
    n = d.n
    if n == 0:
        report.violations.append("model has no states")
        return report
    if d.trans.shape != (n, n):
        report.violations.append(f"transition matrix shape {d.trans.shape} != ({n}, {n})")
        return report
    if d.labels.shape != (n,):
        report.violations.append(f"{d.labels.shape[0]} labels for {n} states")
    else:
        for s in np.flatnonzero((d.labels < 0) | (d.labels >= len(d.alphabet))):
            report.violations.append(f"state {s} has invalid label id {d.labels[s]}")
    for s in np.flatnonzero((d.init < 0) | (d.init > 1)):
        report.violations.append(f"init[{s}] = {d.init[s]!r} outside [0, 1]")
    total = float(d.init.sum())
    if abs(total - 1.0) > tol:
        report.violations.append(f"init sums to {total:.12g}")
    coo = d.trans.tocoo()
    bad = (coo.data < 0) | (coo.data > 1)
    for r, c, v in zip(coo.row[bad], coo.col[bad], coo.data[bad]):
        report.violations.append(f"entry ({r}, {c}) = {v!r} outside [0, 1]")
    sums = np.asarray(d.trans.sum(axis=1)).ravel()
    for s in np.flatnonzero(np.abs(sums - 1.0) > tol):
        report.violations.append(f"row {s} sums to {sums[s]:.12g}")
    return report


def sample_traces(
    d: Dtmc,
    count: int,
    rng: np.random.Generator,
    *,
    length: int | None = None,
    stop_prob: float | None = None,
) -> list[tuple[str, ...]]:
    """Sample ``count`` label sequences of paths starting from ``d.init``.

    Exactly one of ``length`` (fixed trace length) or ``stop_prob``
    (geometric length, stop after each observation with that probability)
    must be given.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if (length is None) == (stop_prob is None):
        raise ValueError("give exactly one of length or stop_prob")
    if length is not None:
        if length < 1:
            raise ValueError("fixed length must be >= 1")
        lengths = np.full(count, length, dtype=np.int64)
    else:
        if not 0 < stop_prob < 1:
            raise ValueError("stop probability must lie in (0, 1)")
        lengths = rng.geometric(stop_prob, size=count)

    paths = _sample_paths(d, count, int(lengths.max()), rng)
    symbols = np.asarray(d.alphabet.symbols, dtype=object)[d.labels[paths]]
    return [tuple(row[:k]) for row, k in zip(symbols.tolist(), lengths.tolist())]


def _sample_paths(d: Dtmc, count: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """State paths of ``steps`` states each, shape (count, steps)."""
    cum_init = np.cumsum(d.init)
    paths = np.empty((count, steps), dtype=np.int64)
    u = rng.random(count) * cum_init[-1]
    paths[:, 0] = np.minimum(np.searchsorted(cum_init, u, side="right"), d.n - 1)
    # Global cumulative sum over CSR data locates a successor in one search.
    trans = d.trans
    cum = np.cumsum(trans.data)
    row_start = np.concatenate(([0.0], cum))[trans.indptr[:-1]]
    row_mass = np.concatenate(([0.0], cum))[trans.indptr[1:]] - row_start
    for t in range(1, steps):
        cur = paths[:, t - 1]
        target = row_start[cur] + rng.random(count) * row_mass[cur]
        pos = np.searchsorted(cum, target, side="right")
        pos = np.clip(pos, trans.indptr[cur], trans.indptr[cur + 1] - 1)
        paths[:, t] = trans.indices[pos]
    return paths


def string_probability(d: Dtmc, w: Sequence[str]) -> float:
    """Probability that a path's first ``len(w)`` labels spell ``w``."""
    ids = d.alphabet.encode(w)
    if ids is None:
        return 0.0
    if not ids:
        return 1.0
    v = d.init * (d.labels == ids[0])
    for sym in ids[1:]:
        v = (v @ d.trans) * (d.labels == sym)
    return float(v.sum())


def log_string_probability(d: Dtmc, w: Sequence[str]) -> float:
    """Natural log of :func:`string_probability`, safe for long strings."""
    ids = d.alphabet.encode(w)
    if ids is None:
        return NEG_INF
    if not ids:
        return 0.0
    table = d.successor_table
    if table is not None:
        init_state, init_prob, succ, prob = table
        state = int(init_state[ids[0]])
        if state < 0:
            return NEG_INF
        logp = math.log(init_prob[ids[0]])
        succ_rows = succ.tolist()
        prob_rows = prob.tolist()
        for sym in ids[1:]:
            p = prob_rows[state][sym]
            if p <= 0:
                return NEG_INF
            logp += math.log(p)
            state = succ_rows[state][sym]
        return logp
    v = d.init * (d.labels == ids[0])
    logp = 0.0
    for step, sym in enumerate(ids):
        if step:
            v = (v @ d.trans) * (d.labels == sym)
        s = v.sum()
        if s <= 0:
            return NEG_INF
        logp += math.log(s)
        v = v / s
    return logp


class TraceTrie:
    """Traces grouped by shared prefixes, stored level by level.

    ``levels[d]`` holds arrays ``(parent, symbol, ends)`` for the nodes of
    depth ``d + 1``: the position of the parent in the previous level, the
    symbol id on the incoming edge (-1 for a foreign symbol), and how many
    traces end at that node.
    """

    def __init__(self, levels: list[tuple[np.ndarray, np.ndarray, np.ndarray]]):
        self.levels = levels

    @classmethod
    def from_traces(cls, traces: Iterable[Sequence[str]], alphabet: Alphabet) -> "TraceTrie":
        children: list[dict] = [{}]
        ends: list[int] = [0]
        parent: list[int] = [-1]
        symbol: list[int] = [-1]
        depth: list[int] = [0]
        for trace in traces:
            node = 0
            for s in trace:
                nxt = children[node].get(s)
                if nxt is None:
                    nxt = len(ends)
                    children[node][s] = nxt
                    children.append({})
                    ends.append(0)
                    parent.append(node)
                    symbol.append(alphabet.index.get(s, -1))
                    depth.append(depth[node] + 1)
                node = nxt
            ends[node] += 1
        return cls._from_arrays(np.array(parent), np.array(symbol), np.array(ends), np.array(depth))

    @classmethod
    def _from_arrays(cls, parent, symbol, ends, depth) -> "TraceTrie":
        """Build from flat per-node arrays (node 0 is the root)."""
        levels = []
        position = np.zeros(len(parent), dtype=np.int64)
        for d in range(1, int(depth.max()) + 1 if len(depth) > 1 else 1):
            nodes = np.flatnonzero(depth == d)
            position[nodes] = np.arange(nodes.size)
            levels.append((position[parent[nodes]], symbol[nodes], ends[nodes]))
        return cls(levels)


def trie_log_likelihood(d: Dtmc, trie: TraceTrie) -> float:
    """Sum of log string probabilities over all traces in ``trie``."""
    if not trie.levels:
        return 0.0
    table = d.successor_table
    total = 0.0
    if table is not None:
        init_state, init_prob, succ, prob = table
        state = logp = None
        for depth, (parent, sym, ends) in enumerate(trie.levels):
            known = sym >= 0
            safe_sym = np.where(known, sym, 0)
            if depth == 0:
                nxt = np.where(known, init_state[safe_sym], -1)
                p = np.where(known, init_prob[safe_sym], 0.0)
                base = np.zeros(sym.size)
            else:
                ps = state[parent]
                alive = ps >= 0
                ps_safe = np.where(alive, ps, 0)
                nxt = np.where(alive & known, succ[ps_safe, safe_sym], -1)
                p = np.where(alive & known, prob[ps_safe, safe_sym], 0.0)
                base = logp[parent]
            with np.errstate(divide="ignore"):
                logp = base + np.log(p)
            state = np.where(p > 0, nxt, -1)
            contribution = _accumulate(ends, logp)
            if contribution is None:
                return NEG_INF
            total += contribution
        return total

    forward = logscale = None
    labels = d.labels
    for depth, (parent, sym, ends) in enumerate(trie.levels):
        mask = labels[None, :] == sym[:, None]
        if depth == 0:
            a = d.init[None, :] * mask
            base = np.zeros(sym.size)
        else:
            a = np.asarray(forward[parent] @ d.trans) * mask
            base = logscale[parent]
        s = a.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            logscale = base + np.log(s)
            forward = np.where(s[:, None] > 0, a / s[:, None], 0.0)
        contribution = _accumulate(ends, logscale)
        if contribution is None:
            return NEG_INF
        total += contribution
    return total


def _accumulate(ends: np.ndarray, logp: np.ndarray) -> float | None:
    hit = ends > 0
    if not hit.any():
        return 0.0
    vals = logp[hit]
    if np.isneginf(vals).any():
        return None
    return float(np.dot(ends[hit], vals))


def log_likelihood(d: Dtmc, traces: Iterable[Sequence[str]]) -> float:
    """``ln Pr_M(Pi)``: summed log probabilities, ``-inf`` if any trace is impossible."""
    return trie_log_likelihood(d, TraceTrie.from_traces(traces, d.alphabet))


def steady_state(d: Dtmc, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Long-run distribution reached from ``d.init`` by damped power iteration.

    Each step is ``pi <- 0.999 * pi @ Tr + 0.001 * pi``, which shares the
    fixed points of ``Tr`` but has no eigenvalue on the unit circle other
    than 1, so periodic chains converge too.
    """
    pi = d.init.copy()
    trans_t = d.trans.T.tocsr()
    for _ in range(max_iter):
        step = trans_t @ pi
        if np.max(np.abs(step - pi)) <= tol:
            step /= step.sum()
            return step
        pi = 0.999 * step + 0.001 * pi
    raise ConvergenceError(f"steady state not reached within {max_iter} iterations")


def random_dtmc(n: int, density: float, alphabet: Alphabet | Sequence[str], rng: np.random.Generator) -> Dtmc:
    """Random model: each state draws ``ceil(density * n)`` successors.

    Weights come from normalized uniform draws and labels are uniform over
    the alphabet. The start state is 0; any state unreachable from it gets
    one incoming edge from a reachable state.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    alphabet = alphabet if isinstance(alphabet, Alphabet) else Alphabet(tuple(alphabet))
    k = min(n, math.ceil(density * n))
    weights = np.zeros((n, n))
    for s in range(n):
        succ = rng.choice(n, size=k, replace=False)
        weights[s, succ] = rng.random(k) + np.finfo(float).tiny
    labels = rng.integers(len(alphabet), size=n)

    while True:
        reached = _reachable(weights > 0, [0])
        missing = np.flatnonzero(~reached)
        if missing.size == 0:
            break
        src = rng.choice(np.flatnonzero(reached))
        weights[src, missing[0]] = rng.random() + np.finfo(float).tiny

    trans = weights / weights.sum(axis=1, keepdims=True)
    init = np.zeros(n)
    init[0] = 1.0
    return Dtmc(alphabet, init, trans, labels)


def _reachable(adj: np.ndarray, start: Iterable[int]) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = list(start)
    seen[stack] = True
    while stack:
        s = stack.pop()
        for t in np.flatnonzero(adj[s] & ~seen):
            seen[t] = True
            stack.append(t)
    return seen
