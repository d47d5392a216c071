import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtmclearn.aalergia import (
    EpsilonSearchConfig,
    MergeError,
    MergeState,
    bic_score,
    compatible,
    golden_section_max,
    learn_aalergia,
    merge,
    red_blue_merge,
    select_epsilon_bic,
    write_sweep_csv,
)
from dtmclearn.fileformat import dumps
from dtmclearn.model import log_likelihood, make_rng, sample_traces, validate_dtmc
from dtmclearn.traces import TraceSet, build_prefix_tree


def tree_of(*groups):
    """Prefix tree from (word, multiplicity) pairs."""
    return build_prefix_tree(TraceSet.from_sequences([tuple(w) for w, k in groups for _ in range(k)]))


@pytest.fixture
def split_tree():
    # nodes <c,a> and <d,a> both have count 100 and next-x probability 0.9 vs 0.1
    return tree_of(("cax", 90), ("cay", 10), ("dax", 10), ("day", 90))


def test_bound_value(split_tree):
    m = MergeState(split_tree)
    n1, n2 = split_tree.index[("c", "a")], split_tree.index[("d", "a")]
    bound = m.bound(n1, 0.5) + m.bound(n2, 0.5)
    assert bound == pytest.approx(2 * math.sqrt(3 * math.log(100) / 100), abs=1e-12)
    assert bound == pytest.approx(0.744, abs=1e-3)


def test_split_node_incompatible_then_compatible(split_tree):
    m = MergeState(split_tree)
    n1, n2 = split_tree.index[("c", "a")], split_tree.index[("d", "a")]
    assert not compatible(m, n1, n2, 0.5)
    # bound 2 * sqrt(6 * 0.7 * ln 100 / 100) ~ 0.88 exceeds the 0.8 difference
    assert compatible(m, n1, n2, 0.7)


def test_different_last_symbol_never_compatible(split_tree):
    m = MergeState(split_tree)
    assert not compatible(m, split_tree.index[("c",)], split_tree.index[("d",)], 1e6)


def test_identical_count_one_leaves_compatible():
    t = tree_of(("ab", 1), ("cb", 1))
    m = MergeState(t)
    assert compatible(m, t.index[("a", "b")], t.index[("c", "b")], 0.01)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.001, 2.0), st.floats(1.01, 50.0))
def test_compatibility_monotone_in_eps(seed, eps, factor):
    rng = make_rng(seed)
    words = ["".join(rng.choice(list("ab"), size=int(rng.integers(1, 5)))) for _ in range(30)]
    t = build_prefix_tree(TraceSet.from_sequences([tuple(w) for w in words]))
    m = MergeState(t)
    by_sym = {}
    for i in range(1, len(t)):
        by_sym.setdefault(int(t.symbol[i]), []).append(i)
    for nodes in by_sym.values():
        for a in nodes[:6]:
            for b in nodes[:6]:
                if a != b and compatible(m, a, b, eps):
                    assert compatible(m, a, b, eps * factor)


def test_merge_leaf_counts_add():
    t = tree_of(("ab", 2), ("cb", 3))
    m = MergeState(t)
    n1, n2 = t.index[("a", "b")], t.index[("c", "b")]
    merge(m, n1, n2)
    assert m.count[n1] == 5
    assert m.succ[t.index[("c",)]][t.alphabet.index["b"]] == n1
    assert m.find(n2) == n1
    assert m.count[0] == 5


def test_merge_unions_children():
    t = tree_of(("abx", 1), ("cby", 1))
    m = MergeState(t)
    n1, n2 = t.index[("a", "b")], t.index[("c", "b")]
    merge(m, n1, n2)
    assert set(m.succ[n1]) == {t.alphabet.index["x"], t.alphabet.index["y"]}


def test_merge_guards():
    t = tree_of(("aab", 2), ("b", 1))
    m = MergeState(t)
    with pytest.raises(MergeError):
        merge(m, t.index[("a", "a")], t.index[("a",)])
    with pytest.raises(MergeError):
        merge(m, t.index[("a",)], t.index[("b",)])
    with pytest.raises(MergeError):
        merge(m, t.index[("a",)], 0)


def test_red_blue_conservation(recovery_traces):
    t = build_prefix_tree(TraceSet(recovery_traces.traces[:500], recovery_traces.alphabet))
    m = MergeState(t)
    reds = red_blue_merge(m, 0.05)
    assert m.count[0] == t.n_traces
    assert sum(m.freq[0].values()) == t.n_traces
    for i in range(1, len(t)):
        assert m.last[m.find(i)] == t.symbol[i]
    for r in reds:
        assert m.live(r)
        assert sum(m.freq[r].values()) <= m.count[r]
        for c in m.succ[r].values():
            assert c in set(reds)


def test_large_eps_gives_one_state_per_symbol(recovery_traces):
    model = learn_aalergia(recovery_traces, 1e6)
    assert model.n == 3
    assert sorted(model.labels.tolist()) == [0, 1, 2]
    assert validate_dtmc(model).ok


def test_learned_rows_stochastic_and_deterministic():
    rng = make_rng(4)
    for eps in (0.001, 0.1, 5.0):
        words = [tuple(rng.choice(list("xyz"), size=int(rng.integers(1, 7)))) for _ in range(200)]
        a = learn_aalergia(TraceSet.from_sequences(words), eps)
        b = learn_aalergia(TraceSet.from_sequences(words), eps)
        assert validate_dtmc(a, 1e-9).ok
        assert dumps(a) == dumps(b)


def test_bic_score_formula(recovery_traces):
    t = build_prefix_tree(recovery_traces)
    model = learn_aalergia(t, 1.0)
    bic, ll = bic_score(model, t, 0.5)
    assert ll == pytest.approx(log_likelihood(model, recovery_traces.traces), rel=1e-12)
    assert bic == pytest.approx(ll - 0.5 * model.n * math.log(recovery_traces.n_letters), rel=1e-12)


def test_golden_section_against_grid():
    rng = make_rng(8)
    for _ in range(20):
        peak = float(rng.uniform(-9, 9))
        width = float(rng.uniform(0.5, 5))
        f = lambda x: -abs(x - peak) ** 1.5 / width
        best, evals = golden_section_max(f, -10, 10, 0.25, 60)
        grid = np.linspace(-10, 10, 20001)
        assert abs(best - grid[np.argmax([f(x) for x in grid])]) <= 0.25
        assert best == max(evals, key=lambda e: e[1])[0]


def test_golden_section_budget_and_collapse():
    calls = []
    best, evals = golden_section_max(lambda x: calls.append(x) or -x * x, -10, 10, 1e-9, 7)
    assert len(evals) == 7 == len(calls)
    best, evals = golden_section_max(lambda x: x, 1.0, 1.1, 0.25, 30)
    assert evals == [(1.05, 1.05)] and best == 1.05


def test_select_epsilon_log_consistent(recovery_traces, tmp_path):
    t = build_prefix_tree(TraceSet(recovery_traces.traces[:1000], recovery_traces.alphabet))
    eps, model, log = select_epsilon_bic(t)
    assert 2.0**-10 <= eps <= 2.0**10
    assert len(log) <= 30
    for row in log:
        again = learn_aalergia(t, row.epsilon)
        assert again.n == row.states
        assert bic_score(again, t, 0.5)[0] == row.bic
    assert max(log, key=lambda r: r.bic).epsilon == eps
    assert bic_score(model, t, 0.5)[0] == max(r.bic for r in log)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(log, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epsilon", "bic", "states", "loglik"]
    assert len(rows) == len(log) + 1


def test_select_collapsed_range(recovery_traces):
    cfg = EpsilonSearchConfig(lo=1.0, hi=1.1)
    eps, _, log = select_epsilon_bic(TraceSet(recovery_traces.traces[:200], recovery_traces.alphabet), cfg)
    assert len(log) == 1
    assert eps == pytest.approx(2 ** (math.log2(1.1) / 2))


def test_config_validation():
    with pytest.raises(ValueError):
        EpsilonSearchConfig(lo=2, hi=1)
    with pytest.raises(ValueError):
        EpsilonSearchConfig(tol=0)
    with pytest.raises(ValueError):
        learn_aalergia(TraceSet.from_sequences([("a",)]), 0)


def test_recovered_chain_close_to_generator(chain3):
    tr = sample_traces(chain3, 3000, make_rng(21), stop_prob=0.2)
    model = learn_aalergia(TraceSet(tr, chain3.alphabet), 1.0)
    assert model.n == 3
    order = np.argsort(model.labels)
    assert np.max(np.abs(model.dense()[np.ix_(order, order)] - chain3.dense())) < 0.05
