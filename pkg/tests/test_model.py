import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import brute_force_probability, random_small_model
from dtmclearn.model import (
    NEG_INF,
    Alphabet,
    ConvergenceError,
    Dtmc,
    log_likelihood,
    log_string_probability,
    make_rng,
    random_dtmc,
    sample_traces,
    steady_state,
    string_probability,
    validate_dtmc,
)


def test_alphabet_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        Alphabet(("a", "a"))
    with pytest.raises(ValueError):
        Alphabet(())
    assert Alphabet(("x", "y")).index == {"x": 0, "y": 1}


def test_validate_accepts_well_formed_chain():
    d = Dtmc(("a", "b", "c"), [1, 0, 0], [[0, 0.5, 0.5], [0, 1, 0], [0, 0, 1]], [0, 1, 2])
    assert validate_dtmc(d).ok


def test_validate_reports_row_sum():
    d = Dtmc(("a",), [1, 0], [[0.5, 0.4], [0, 1]], [0, 0])
    report = validate_dtmc(d)
    assert not report.ok
    assert "row 0 sums to 0.9" in report.violations


def test_validate_reports_negative_entry():
    d = Dtmc(("a",), [1, 0], [[1.1, -0.1], [0, 1]], [0, 0])
    msgs = validate_dtmc(d).violations
    assert any("(0, 1)" in m and "-0.1" in m for m in msgs)


def test_validate_reports_init_sum():
    d = Dtmc(("a",), [0.5, 0.2], [[1, 0], [0, 1]], [0, 0])
    assert any(m.startswith("init") for m in validate_dtmc(d).violations)


def test_sample_single_state_fixed_length():
    d = Dtmc(("a",), [1.0], [[1.0]], [0])
    assert sample_traces(d, 2, make_rng(0), length=3) == [("a", "a", "a"), ("a", "a", "a")]


def test_sample_is_deterministic(chain3):
    a = sample_traces(chain3, 50, make_rng(4), stop_prob=0.3)
    b = sample_traces(chain3, 50, make_rng(4), stop_prob=0.3)
    assert a == b


def test_sample_first_symbol_frequency():
    d = Dtmc(("a", "b"), [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [0, 1])
    tr = sample_traces(d, 10000, make_rng(11), length=1)
    hits = sum(t[0] == "a" for t in tr)
    lo, hi = stats.binom.interval(0.9999, 10000, 0.5)
    assert lo <= hits <= hi
    assert abs(hits / 10000 - 0.5) <= 0.02


def test_sample_rejects_bad_policy(chain3):
    with pytest.raises(ValueError):
        sample_traces(chain3, 1, make_rng(0))
    with pytest.raises(ValueError):
        sample_traces(chain3, 1, make_rng(0), length=0)
    with pytest.raises(ValueError):
        sample_traces(chain3, 1, make_rng(0), stop_prob=1.0)
    with pytest.raises(ValueError):
        sample_traces(chain3, 0, make_rng(0), length=2)


def test_sampled_transitions_follow_matrix(chain3):
    tr = sample_traces(chain3, 2000, make_rng(5), length=20)
    counts = np.zeros((3, 3))
    for t in tr:
        for x, y in zip(t, t[1:]):
            counts["abc".index(x), "abc".index(y)] += 1
    assert np.allclose(counts / counts.sum(axis=1, keepdims=True), chain3.dense(), atol=0.02)


def test_string_probability_d1(chain_d1):
    assert string_probability(chain_d1, ("a", "b")) == 0.5
    assert string_probability(chain_d1, ()) == 1.0
    assert string_probability(chain_d1, ("b",)) == 0.0
    assert string_probability(chain_d1, ("a", "z")) == 0.0


def test_string_probability_matches_enumeration():
    rng = make_rng(123)
    for _ in range(60):
        d = random_small_model(rng)
        for _ in range(4):
            w = tuple(rng.choice(list(d.alphabet.symbols), size=int(rng.integers(0, 6))))
            assert abs(string_probability(d, w) - brute_force_probability(d, w)) <= 1e-12


def test_log_string_probability_paths_agree():
    rng = make_rng(7)
    for _ in range(40):
        d = random_small_model(rng)
        for _ in range(3):
            w = tuple(rng.choice(list(d.alphabet.symbols), size=int(rng.integers(1, 8))))
            p = string_probability(d, w)
            lp = log_string_probability(d, w)
            if p == 0:
                assert lp == NEG_INF
            else:
                assert math.isclose(lp, math.log(p), rel_tol=1e-10, abs_tol=1e-12)


def test_label_deterministic_fast_path(chain3):
    assert chain3.successor_table is not None
    w = ("a", "b", "c", "c", "a")
    expected = math.log(1.0 * 0.5 * 0.5 * 0.4 * 0.3)
    assert math.isclose(log_string_probability(chain3, w), expected, rel_tol=1e-12)


def test_log_likelihood_examples():
    loop = Dtmc(("a",), [1.0], [[1.0]], [0])
    assert log_likelihood(loop, [("a", "a", "a")]) == 0.0
    d = Dtmc(("a", "b"), [1, 0], [[0, 1], [0, 1]], [0, 1])
    assert log_likelihood(d, [("a", "b"), ("a", "a")]) == NEG_INF


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_log_likelihood_additive(seed, n1, n2):
    rng = make_rng(seed)
    d = random_small_model(rng)
    tr = sample_traces(d, n1 + n2, rng, stop_prob=0.3)
    whole = log_likelihood(d, tr)
    parts = log_likelihood(d, tr[:n1]) + log_likelihood(d, tr[n1:])
    assert math.isclose(whole, parts, rel_tol=1e-10, abs_tol=1e-9)
    direct = sum(math.log(string_probability(d, t)) for t in tr)
    assert math.isclose(whole, direct, rel_tol=1e-10, abs_tol=1e-9)


def test_steady_state_examples():
    sym = Dtmc(("a", "b"), [1, 0], [[0.5, 0.5], [0.5, 0.5]], [0, 1])
    assert np.allclose(steady_state(sym), [0.5, 0.5], atol=1e-10)
    one = Dtmc(("a",), [1.0], [[1.0]], [0])
    assert np.allclose(steady_state(one), [1.0])
    d = Dtmc(("a", "b"), [1, 0], [[0.7, 0.3], [0.7, 0.3]], [0, 1])
    assert np.allclose(steady_state(d), [0.7, 0.3], atol=1e-9)


def _solve_stationary(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    a = np.vstack([p.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(a, b, rcond=None)[0]


def test_steady_state_matches_linear_solve():
    rng = make_rng(99)
    for _ in range(20):
        d = random_dtmc(5, 1.0, ("a", "b"), rng)
        pi = steady_state(d)
        assert np.max(np.abs(pi - _solve_stationary(d.dense()))) <= 1e-8
        assert np.max(np.abs(pi @ d.dense() - pi)) <= 1e-9


def test_steady_state_periodic_chain_converges():
    d = Dtmc(("a", "b"), [1, 0], [[0, 1], [1, 0]], [0, 1])
    assert np.allclose(steady_state(d), [0.5, 0.5], atol=1e-8)


def test_steady_state_reports_non_convergence(chain3):
    with pytest.raises(ConvergenceError):
        steady_state(chain3, max_iter=2)


def test_random_dtmc_contract():
    rng = make_rng(3)
    for n in (1, 2, 5, 12):
        d = random_dtmc(n, 0.3, ("a", "b", "c"), rng)
        assert validate_dtmc(d).ok
        # every state reachable from the start
        reach = {0}
        frontier = [0]
        dense = d.dense()
        while frontier:
            s = frontier.pop()
            for t in np.flatnonzero(dense[s] > 0):
                if t not in reach:
                    reach.add(int(t))
                    frontier.append(int(t))
        assert reach == set(range(n))


def test_random_dtmc_density_one_is_dense():
    d = random_dtmc(6, 1.0, ("a",), make_rng(1))
    assert (d.dense() > 0).all()


def test_random_dtmc_deterministic():
    a = random_dtmc(7, 0.4, ("a", "b"), make_rng(5))
    b = random_dtmc(7, 0.4, ("a", "b"), make_rng(5))
    assert np.array_equal(a.dense(), b.dense()) and np.array_equal(a.labels, b.labels)


def test_random_dtmc_successor_count():
    d = random_dtmc(10, 0.3, ("a",), make_rng(8))
    counts = (d.dense() > 0).sum(axis=1)
    # ceil(0.3 * 10) = 3 drawn successors, plus possibly repair edges
    assert (counts >= 3).all()


def test_make_rng_streams_independent_and_reproducible():
    a = make_rng(1, 2).random(4)
    assert np.array_equal(a, make_rng(1, 2).random(4))
    assert not np.array_equal(a, make_rng(1, 3).random(4))


def test_enumeration_oracle_sanity(chain_d1):
    # the oracle itself reproduces the hand computation
    assert brute_force_probability(chain_d1, ("a", "b")) == 0.5
    assert sum(brute_force_probability(chain_d1, w) for w in itertools.product("abc", repeat=2)) == pytest.approx(1.0)
