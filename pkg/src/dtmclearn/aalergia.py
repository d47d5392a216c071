"""State-merging learner over the frequency prefix tree, plus BIC-driven epsilon selection."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .model import NEG_INF, Dtmc, trie_log_likelihood
from .traces import PrefixTree, TraceSet, build_prefix_tree


class MergeError(ValueError):
    pass


class MergeState:
    """Mutable working copy of a prefix tree during state merging.

    Nodes keep their prefix-tree ids. ``succ[i]`` maps a symbol id to the
    node the edge currently leads to and ``freq[i]`` holds the number of
    strings taking that edge; ``count[i]`` is the number of strings passing
    through node ``i``. Folded nodes point at their representative in
    ``rep``.
    """

    def __init__(self, tree: PrefixTree):
        self.tree = tree
        self.count: list[int] = tree.counts.tolist()
        self.last: list[int] = tree.symbol.tolist()
        self.succ: list[dict[int, int]] = [dict(ch) for ch in tree.children]
        self.freq: list[dict[int, int]] = [{e: self.count[c] for e, c in ch.items()} for ch in tree.children]
        self.source: list[int] = tree.parent.tolist()
        self.rep: list[int] = list(range(len(tree)))
        # (new parent, node) for every subtree re-attached by a fold
        self.adopted: list[tuple[int, int]] = []

    def find(self, node: int) -> int:
        while self.rep[node] != node:
            node = self.rep[node]
        return node

    def live(self, node: int) -> bool:
        return self.rep[node] == node

    def bound(self, node: int, eps: float) -> float:
        """One node's share of the Angluin-style bound."""
        n = self.count[node]
        if n <= 0:
            raise MergeError(f"node {node} has zero count")
        return math.sqrt(6.0 * eps * math.log(n) / n)


def compatible(m: MergeState, n1: int, n2: int, eps: float) -> bool:
    """Whether two nodes agree on their last symbol and on all continuation
    probabilities up to the summed bound.

    Continuations are the strings realized below either node; strings
    realized by neither have probability 0 on both sides. Equal
    probabilities always pass, which matters when both counts are 1 and the
    bound is 0.
    """
    if n1 == 0 or n2 == 0 or m.last[n1] != m.last[n2]:
        return False
    bound = m.bound(n1, eps) + m.bound(n2, eps)
    count, succ, freq = m.count, m.succ, m.freq
    stack = [(n1, n2, 1.0, 1.0)]
    while stack:
        a, b, pa, pb = stack.pop()
        diff = abs(pa - pb)
        if diff != 0 and not diff < bound:
            return False
        if pa < bound and pb < bound:
            # every extension differs by at most max(pa, pb)
            continue
        sa = succ[a] if a is not None else {}
        sb = succ[b] if b is not None else {}
        for e in sa.keys() | sb.keys():
            ca, cb = sa.get(e), sb.get(e)
            qa = pa * freq[a][e] / count[a] if ca is not None else 0.0
            qb = pb * freq[b][e] / count[b] if cb is not None else 0.0
            stack.append((ca, cb, qa, qb))
    return True


def merge(m: MergeState, n1: int, n2: int) -> MergeState:
    """Redirect the edge into ``n2`` to ``n1`` and fold ``n2``'s subtree into it."""
    if n2 == 0:
        raise MergeError("cannot merge the root")
    if not (m.live(n1) and m.live(n2)):
        raise MergeError("both nodes must be their own representatives")
    if m.last[n1] != m.last[n2]:
        raise MergeError("nodes disagree on their last observation")
    anc = n1
    while anc > 0:
        if anc == n2:
            raise MergeError(f"node {n2} is an ancestor of node {n1}")
        anc = m.source[anc]
    parent = m.source[n2]
    m.succ[parent][m.last[n2]] = n1

    stack = [(n1, n2)]
    while stack:
        r, b = stack.pop()
        m.count[r] += m.count[b]
        m.rep[b] = r
        for e, c in m.succ[b].items():
            m.freq[r][e] = m.freq[r].get(e, 0) + m.freq[b][e]
            target = m.succ[r].get(e)
            if target is None:
                m.succ[r][e] = c
                m.source[c] = r
                m.adopted.append((r, c))
            else:
                stack.append((target, c))
        m.succ[b] = {}
        m.freq[b] = {}
    return m


def red_blue_merge(m: MergeState, eps: float) -> list[int]:
    """Run the red-blue loop; returns red nodes in promotion order.

    The blue node with the smallest id (shortest, then alphabetically first
    prefix) is tried against the red nodes in promotion order and merged
    into the first compatible one, otherwise promoted.
    """
    red = [0]
    red_set = {0}
    reds_by_symbol: dict[int, list[int]] = {}
    heap = sorted(m.succ[0].values())

    def is_blue(c):
        src = m.source[c]
        return m.live(c) and c not in red_set and src in red_set and m.succ[src].get(m.last[c]) == c

    while heap:
        blue = heapq.heappop(heap)
        if not is_blue(blue):
            continue
        m.adopted.clear()
        for r in reds_by_symbol.get(m.last[blue], ()):
            if compatible(m, r, blue, eps):
                merge(m, r, blue)
                for parent, c in m.adopted:
                    if parent in red_set:
                        heapq.heappush(heap, c)
                break
        else:
            red.append(blue)
            red_set.add(blue)
            reds_by_symbol.setdefault(m.last[blue], []).append(blue)
            for c in m.succ[blue].values():
                heapq.heappush(heap, c)
    return red


def merge_state_to_dtmc(m: MergeState, states: list[int]) -> Dtmc:
    """Normalize edge frequencies of the given live nodes (root excluded)
    into a DTMC. Stop mass is dropped; a state with no outgoing edge loops.
    """
    pos = {node: i for i, node in enumerate(states)}
    n = len(states)
    rows, cols, vals = [], [], []
    for i, node in enumerate(states):
        total = sum(m.freq[node].values())
        if total == 0:
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            continue
        for e, c in m.succ[node].items():
            rows.append(i)
            cols.append(pos[c])
            vals.append(m.freq[node][e] / total)
    init = np.zeros(n)
    root_total = sum(m.freq[0].values())
    for e, c in m.succ[0].items():
        init[pos[c]] += m.freq[0][e] / root_total
    labels = [m.last[s] for s in states]
    trans = sparse.csr_array((vals, (rows, cols)), shape=(n, n))
    return Dtmc(m.tree.alphabet, init, trans, labels)


def learn_aalergia(pi: TraceSet | PrefixTree, eps: float) -> Dtmc:
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    tree = pi if isinstance(pi, PrefixTree) else build_prefix_tree(pi)
    m = MergeState(tree)
    red = red_blue_merge(m, eps)
    return merge_state_to_dtmc(m, red[1:])


def bic_score(model: Dtmc, tree: PrefixTree, mu: float) -> tuple[float, float]:
    """``(bic, loglik)`` with ``bic = loglik - mu * |M| * ln(total letters)``."""
    ll = trie_log_likelihood(model, tree.trie)
    if ll == NEG_INF:
        return NEG_INF, NEG_INF
    return ll - mu * model.n * math.log(tree.n_letters), ll


@dataclass(frozen=True)
class EpsilonSearchConfig:
    lo: float = 2.0**-10
    hi: float = 2.0**10
    tol: float = 0.25
    max_evals: int = 30
    mu: float = 0.5
    log_scale: bool = True

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError("need 0 < lo < hi")
        if self.tol <= 0 or self.max_evals < 1:
            raise ValueError("tolerance and evaluation budget must be positive")


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    bic: float
    states: int
    loglik: float


_INV_PHI = (math.sqrt(5) - 1) / 2


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float, max_evals: int):
    """Golden-section search for a maximum of ``f`` on ``[lo, hi]``.

    Returns ``(best_x, evaluations)`` where ``evaluations`` lists every
    ``(x, f(x))`` in call order; ``best_x`` is the best evaluated point.
    """
    evals: list[tuple[float, float]] = []

    def call(x):
        y = f(x)
        evals.append((x, y))
        return y

    if hi - lo < tol:
        call((lo + hi) / 2)
        return evals[0][0], evals
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = call(c), call(d)
    while b - a >= tol and len(evals) < max_evals:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = call(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = call(d)
    best = max(evals, key=lambda e: e[1])
    return best[0], evals


def select_epsilon_bic(pi: TraceSet | PrefixTree, cfg: EpsilonSearchConfig = EpsilonSearchConfig()):
    """Pick epsilon by golden-section search on the BIC score.

    Returns ``(epsilon, model, sweep_log)``. The search runs over
    ``log2(epsilon)`` when ``cfg.log_scale`` is set.
    """
    tree = pi if isinstance(pi, PrefixTree) else build_prefix_tree(pi)
    models: dict[float, Dtmc] = {}
    log: list[SweepRow] = []

    to_eps = (lambda x: 2.0**x) if cfg.log_scale else (lambda x: x)

    def score(x):
        eps = to_eps(x)
        model = learn_aalergia(tree, eps)
        bic, ll = bic_score(model, tree, cfg.mu)
        models[x] = model
        log.append(SweepRow(eps, bic, model.n, ll))
        return bic

    lo, hi = (math.log2(cfg.lo), math.log2(cfg.hi)) if cfg.log_scale else (cfg.lo, cfg.hi)
    best_x, _ = golden_section_max(score, lo, hi, cfg.tol, cfg.max_evals)
    return to_eps(best_x), models[best_x], log


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "bic", "states", "loglik"])
        for r in rows:
            w.writerow([repr(r.epsilon), repr(r.bic), r.states, repr(r.loglik)])
