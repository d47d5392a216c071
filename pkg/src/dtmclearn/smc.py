"""Monte Carlo estimation of bounded properties with Hoeffding intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Dtmc, _sample_paths, make_rng
from .properties import Kind, PropertySpec

BATCH = 10_000

# sampler(count, length, rng) -> `count` label sequences of at least `length` symbols
Sampler = Callable[[int, int, np.random.Generator], Sequence[Sequence[str]]]


class SamplerExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class SmcConfig:
    """Either a fixed sample count or a target half-width, at confidence ``delta``.

    ``delta`` is the probability that the true value lies outside the interval.
    """

    delta: float = 0.01
    samples: int | None = None
    halfwidth: float | None = None
    max_samples: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("confidence parameter must lie in (0, 1)")
        if (self.samples is None) == (self.halfwidth is None):
            raise ValueError("give exactly one of samples or halfwidth")
        if self.samples is not None and self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if self.halfwidth is not None and self.halfwidth <= 0:
            raise ValueError("half-width must be positive")

    def sample_count(self) -> int:
        n = self.samples if self.samples is not None else samples_for_halfwidth(self.halfwidth, self.delta)
        if n > self.max_samples:
            raise ValueError(f"{n} samples needed, above the limit of {self.max_samples}")
        return n


def hoeffding_halfwidth(n: int, delta: float) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def samples_for_halfwidth(w: float, delta: float) -> int:
    return math.ceil(math.log(2.0 / delta) / (2.0 * w * w))


@dataclass(frozen=True)
class SmcResult:
    estimate: float
    halfwidth: float
    samples: int
    confidence: float

    def __str__(self):
        return f"estimate={self.estimate!r} halfwidth={self.halfwidth!r} samples={self.samples} confidence={self.confidence!r}"


def satisfied(p: PropertySpec, in_left: np.ndarray, in_target: np.ndarray) -> np.ndarray:
    """Row-wise verdicts over label-membership matrices of shape (paths, bound + 1)."""
    if p.kind is Kind.EVENTUALLY:
        return in_target.any(axis=1)
    if p.kind is Kind.GLOBALLY:
        return in_target.all(axis=1)
    # left holds at every step strictly before some target step
    before = np.ones_like(in_left)
    before[:, 1:] = np.cumprod(in_left[:, :-1], axis=1).astype(bool)
    return (in_target & before).any(axis=1)


def _batch_hits(source, p: PropertySpec, count: int, rng) -> int:
    steps = p.bound + 1
    if isinstance(source, Dtmc):
        labels = source.labels[_sample_paths(source, count, steps, rng)]
        symbols = source.alphabet.symbols
        target = np.isin(labels, [i for i, s in enumerate(symbols) if s in p.target])
        left = np.isin(labels, [i for i, s in enumerate(symbols) if p.left and s in p.left])
    else:
        words = source(count, steps, rng)
        if len(words) < count or any(len(w) < steps for w in words):
            raise SamplerExhausted(f"sampler returned fewer than {count} executions of length {steps}")
        rows = [list(w[:steps]) for w in words[:count]]
        target = np.array([[s in p.target for s in r] for r in rows], dtype=bool).reshape(count, steps)
        left_set = p.left or frozenset()
        left = np.array([[s in left_set for s in r] for r in rows], dtype=bool).reshape(count, steps)
    return int(satisfied(p, left, target).sum())


def smc_estimate(source: Dtmc | Sampler, p: PropertySpec, cfg: SmcConfig) -> SmcResult:
    """Fraction of sampled ``bound``-step prefixes satisfying ``p``.

    Samples are drawn in batches of fixed size, batch ``b`` from stream
    ``(cfg.seed, b)``, so the estimate does not depend on how batches are
    scheduled.
    """
    if p.bound is None:
        raise ValueError("statistical checking needs a bounded property")
    n = cfg.sample_count()
    hits = 0
    for b, start in enumerate(range(0, n, BATCH)):
        hits += _batch_hits(source, p, min(BATCH, n - start), make_rng(cfg.seed, b))
    return SmcResult(hits / n, hoeffding_halfwidth(n, cfg.delta), n, cfg.delta)
