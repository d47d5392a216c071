"""Trace ingestion and the counting structures the learners consume."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import Alphabet, TraceTrie

Trace = tuple[str, ...]


class _Stop:
    """Marker for the 'no further observation' outcome of a tree node."""

    def __repr__(self):
        return "STOP"


STOP = _Stop()


@dataclass
class TraceSet:
    traces: list[Trace]
    alphabet: Alphabet

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def n_letters(self) -> int:
        return sum(len(t) for t in self.traces)

    @classmethod
    def from_sequences(cls, seqs: Iterable[Sequence[str]], alphabet: Alphabet | None = None) -> "TraceSet":
        traces = [tuple(s) for s in seqs]
        if alphabet is None:
            alphabet = Alphabet(tuple(dict.fromkeys(s for t in traces for s in t)))
        return cls(traces, alphabet)


def parse_traces(text: str | bytes, mode: str = "multi", alphabet: Alphabet | None = None):
    """Read one whitespace-separated trace per line.

    Returns a TraceSet in ``multi`` mode and a single Trace (with its
    alphabet, as ``(trace, alphabet)``) in ``single`` mode. The alphabet
    follows first appearance unless one is supplied.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if mode not in ("multi", "single"):
        raise ValueError(f"unknown mode {mode!r}")
    lines = [ln for ln in text.splitlines() if not ln.lstrip().startswith("#")]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ValueError("no traces in input")
    traces = []
    for lineno, line in enumerate(lines, 1):
        tokens = line.split()
        if not tokens:
            raise ValueError(f"empty trace on line {lineno}")
        traces.append(tuple(tokens))
    if alphabet is None:
        alphabet = Alphabet(tuple(dict.fromkeys(s for t in traces for s in t)))
    else:
        for t in traces:
            foreign = [s for s in t if s not in alphabet]
            if foreign:
                raise ValueError(f"symbol {foreign[0]!r} not in alphabet")
    if mode == "single":
        if len(traces) != 1:
            raise ValueError(f"single-execution input needs exactly one trace, got {len(traces)}")
        return traces[0], alphabet
    return TraceSet(traces, alphabet)


def serialize_traces(traces: Iterable[Sequence[str]]) -> str:
    return "".join(" ".join(t) + "\n" for t in traces)


def read_traces(path, mode: str = "multi"):
    return parse_traces(Path(path).read_bytes(), mode)


def write_traces(traces: Iterable[Sequence[str]], path) -> None:
    Path(path).write_text(serialize_traces(traces), encoding="utf-8")


class PrefixTree:
    """The frequency prefix tree of a trace multiset.

    Nodes are prefixes, numbered breadth-first with siblings in alphabet
    order, so node 0 is the root. ``counts[i]`` is the number of traces that
    have ``nodes[i]`` as a prefix.
    """

    def __init__(self, traces: TraceSet):
        if not len(traces):
            raise ValueError("cannot build a prefix tree from no traces")
        self.alphabet = traces.alphabet
        raw = Counter()
        for t in traces:
            for k in range(len(t) + 1):
                raw[t[:k]] += 1
        idx = self.alphabet.index
        order = sorted(raw, key=lambda p: (len(p), [idx[s] for s in p]))
        self.nodes: list[Trace] = order
        self.index: dict[Trace, int] = {p: i for i, p in enumerate(order)}
        self.counts = np.array([raw[p] for p in order], dtype=np.int64)
        self.parent = np.array([-1] + [self.index[p[:-1]] for p in order[1:]], dtype=np.int64)
        self.symbol = np.array([-1] + [idx[p[-1]] for p in order[1:]], dtype=np.int64)
        self.depth = np.array([len(p) for p in order], dtype=np.int64)
        self.children: list[dict[int, int]] = [{} for _ in order]
        for i in range(1, len(order)):
            self.children[self.parent[i]][self.symbol[i]] = i
        child_mass = np.zeros(len(order), dtype=np.int64)
        np.add.at(child_mass, self.parent[1:], self.counts[1:])
        self.ends = self.counts - child_mass
        self.n_traces = int(self.counts[0])
        self.n_letters = traces.n_letters
        self._trie: TraceTrie | None = None

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, prefix):
        return tuple(prefix) in self.index

    def count(self, prefix: Sequence[str]) -> int:
        i = self.index.get(tuple(prefix))
        return 0 if i is None else int(self.counts[i])

    @property
    def trie(self) -> TraceTrie:
        """Level arrays for likelihood evaluation of the underlying traces."""
        if self._trie is None:
            ends = self.ends.copy()
            ends[0] = 0
            self._trie = TraceTrie._from_arrays(self.parent, self.symbol, ends, self.depth)
        return self._trie


def build_prefix_tree(pi: TraceSet) -> PrefixTree:
    return PrefixTree(pi)


def node_next_dist(t: PrefixTree, node: Sequence[str], exact: bool = False) -> dict:
    """Next-observation distribution at ``node``, including the STOP outcome.

    With ``exact`` the values are Fractions.
    """
    i = t.index.get(tuple(node))
    if i is None:
        raise KeyError(f"node {tuple(node)} not in tree")
    total = int(t.counts[i])
    if total <= 0:
        raise ValueError("node has zero count")
    conv = (lambda a: Fraction(a, total)) if exact else (lambda a: a / total)
    dist = {t.alphabet[sym]: conv(int(t.counts[c])) for sym, c in sorted(t.children[i].items())}
    dist[STOP] = conv(int(t.ends[i]))
    return dist


def multi_step_prob(t: PrefixTree, node: Sequence[str], cont: Sequence[str], exact: bool = False):
    """Product of one-step probabilities from ``node`` along ``cont``."""
    i = t.index.get(tuple(node))
    if i is None:
        raise KeyError(f"node {tuple(node)} not in tree")
    p = Fraction(1) if exact else 1.0
    for s in cont:
        sym = t.alphabet.index.get(s)
        child = None if sym is None else t.children[i].get(sym)
        if child is None:
            return Fraction(0) if exact else 0.0
        num, den = int(t.counts[child]), int(t.counts[i])
        p *= Fraction(num, den) if exact else num / den
        i = child
    return p


class SuffixStats:
    """Substring statistics of one execution, counting overlapping occurrences.

    Counts for a given substring length are materialized on first use.
    """

    def __init__(self, alpha: Sequence[str], alphabet: Alphabet | None = None):
        self.alpha: Trace = tuple(alpha)
        if not self.alpha:
            raise ValueError("execution must be non-empty")
        self.alphabet = alphabet or Alphabet(tuple(dict.fromkeys(self.alpha)))
        self._by_length: dict[int, Counter] = {}

    def __len__(self):
        return len(self.alpha)

    def counts_of_length(self, k: int) -> Counter:
        table = self._by_length.get(k)
        if table is None:
            a = self.alpha
            table = Counter(a[i : i + k] for i in range(len(a) - k + 1)) if k <= len(a) else Counter()
            self._by_length[k] = table
        return table

    def count(self, pi: Sequence[str]) -> int:
        pi = tuple(pi)
        if not pi:
            # Empty context: one slot per observation, so the root predicts unigrams.
            return len(self.alpha)
        return self.counts_of_length(len(pi))[pi]

    def fre(self, pi: Sequence[str]) -> float:
        denom = len(self.alpha) - len(pi) - 1
        if denom <= 0:
            raise ValueError(f"relative frequency undefined for length {len(pi)} in execution of length {len(self.alpha)}")
        return self.count(pi) / denom

    def next_dist(self, ctx: Sequence[str]) -> dict[str, float]:
        ctx = tuple(ctx)
        total = self.count(ctx)
        if total <= 0:
            raise KeyError(f"context {ctx} does not occur")
        return {e: self.count(ctx + (e,)) / total for e in self.alphabet}


def substring_stats(alpha: Sequence[str], alphabet: Alphabet | None = None) -> SuffixStats:
    return SuffixStats(alpha, alphabet)


def suffix_next_dist(s: SuffixStats, ctx: Sequence[str]) -> dict[str, float]:
    return s.next_dist(ctx)
