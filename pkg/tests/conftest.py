import itertools

import numpy as np
import pytest

from dtmclearn.model import Dtmc, make_rng, random_dtmc, sample_traces
from dtmclearn.traces import TraceSet


def d1() -> Dtmc:
    """s0:a -> s1:b or s2:c with 0.5 each; s1 and s2 absorbing."""
    trans = [[0.0, 0.5, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    return Dtmc(("a", "b", "c"), [1.0, 0.0, 0.0], trans, [0, 1, 2])


def three_state() -> Dtmc:
    trans = [[0.2, 0.5, 0.3], [0.4, 0.1, 0.5], [0.3, 0.3, 0.4]]
    return Dtmc(("a", "b", "c"), [1.0, 0.0, 0.0], trans, [0, 1, 2])


EXAMPLE_TEXT = "a a c d\na b d\na c d\n"


def brute_force_probability(d: Dtmc, word) -> float:
    """Sum over every state sequence whose labels spell ``word``."""
    if not word:
        return 1.0
    dense = d.dense()
    total = 0.0
    for path in itertools.product(range(d.n), repeat=len(word)):
        if any(d.label_of(s) != w for s, w in zip(path, word)):
            continue
        p = d.init[path[0]]
        for a, b in zip(path, path[1:]):
            p *= dense[a, b]
        total += p
    return total


def brute_force_check(d: Dtmc, p) -> float:
    """Weight every label word of length bound + 1 by its probability."""
    total = 0.0
    for word in itertools.product(d.alphabet.symbols, repeat=p.bound + 1):
        if p.holds_on(word):
            total += brute_force_probability(d, word)
    return total


def random_small_model(rng: np.random.Generator, max_states: int = 4, symbols=("a", "b", "c")) -> Dtmc:
    """Random model with a random initial distribution (not just a point mass)."""
    n = int(rng.integers(1, max_states + 1))
    d = random_dtmc(n, float(rng.uniform(0.3, 1.0)), symbols[: int(rng.integers(1, len(symbols) + 1))], rng)
    init = rng.random(n)
    return Dtmc(d.alphabet, init / init.sum(), d.trans, d.labels)


@pytest.fixture
def chain_d1():
    return d1()


@pytest.fixture
def chain3():
    return three_state()


@pytest.fixture(scope="session")
def recovery_traces():
    """5000 traces of the 3-state chain, the data of the recovery experiments."""
    d = three_state()
    return TraceSet(sample_traces(d, 5000, make_rng(1), stop_prob=0.2), d.alphabet)
