import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_small_model
from dtmclearn.model import make_rng, sample_traces
from dtmclearn.properties import PropertySpec, check_property
from dtmclearn.smc import (
    SamplerExhausted,
    SmcConfig,
    hoeffding_halfwidth,
    samples_for_halfwidth,
    satisfied,
    smc_estimate,
)


def test_halfwidth_value():
    w = hoeffding_halfwidth(10_000, 0.01)
    assert w == pytest.approx(math.sqrt(math.log(200) / 20_000), rel=1e-15)
    assert abs(w - 0.01628) <= 1e-5


@settings(max_examples=50)
@given(st.floats(1e-4, 0.5), st.floats(1e-6, 0.5))
def test_sample_count_reaches_halfwidth(w, delta):
    n = samples_for_halfwidth(w, delta)
    assert hoeffding_halfwidth(n, delta) <= w * (1 + 1e-12)
    if n > 1:
        assert hoeffding_halfwidth(n - 1, delta) > w * (1 - 1e-12)


def test_config_validation():
    for bad in (dict(delta=0, samples=10), dict(delta=1, samples=10), dict(), dict(samples=10, halfwidth=0.1),
                dict(samples=0), dict(halfwidth=-1.0)):
        with pytest.raises(ValueError):
            SmcConfig(**bad)
    with pytest.raises(ValueError):
        SmcConfig(halfwidth=1e-5, max_samples=1000).sample_count()
    assert SmcConfig(halfwidth=0.01628, delta=0.01).sample_count() == samples_for_halfwidth(0.01628, 0.01)


def test_always_true_property(chain_d1):
    p = PropertySpec.eventually(set(chain_d1.alphabet.symbols), 3)
    for n in (1, 17, 20_001):
        assert smc_estimate(chain_d1, p, SmcConfig(samples=n)).estimate == 1.0


def test_d1_estimate_within_halfwidth(chain_d1):
    p = PropertySpec.eventually({"b"}, 1)
    res = smc_estimate(chain_d1, p, SmcConfig(samples=100_000, seed=3))
    assert abs(res.estimate - check_property(chain_d1, p)) <= res.halfwidth
    assert res.samples == 100_000
    assert str(res).startswith("estimate=")
    assert str(res).split()[2] == "samples=100000"


def test_unbounded_rejected(chain_d1):
    with pytest.raises(ValueError):
        smc_estimate(chain_d1, PropertySpec.eventually({"b"}), SmcConfig(samples=10))


def test_deterministic(chain3):
    p = PropertySpec.until({"a", "b"}, {"c"}, 4)
    cfg = SmcConfig(samples=25_000, seed=12)
    assert smc_estimate(chain3, p, cfg) == smc_estimate(chain3, p, cfg)
    assert smc_estimate(chain3, p, cfg) != smc_estimate(chain3, p, SmcConfig(samples=25_000, seed=13))


def test_coverage(chain_d1):
    p = PropertySpec.eventually({"b"}, 1)
    inside = 0
    for seed in range(200):
        res = smc_estimate(chain_d1, p, SmcConfig(samples=500, delta=0.05, seed=seed))
        inside += abs(res.estimate - 0.5) <= res.halfwidth
    assert inside >= 180


def test_external_sampler(chain3):
    def sampler(count, length, rng):
        return sample_traces(chain3, count, rng, length=length)

    p = PropertySpec.globally({"a", "b"}, 3)
    res = smc_estimate(sampler, p, SmcConfig(samples=40_000, seed=1))
    assert abs(res.estimate - check_property(chain3, p)) <= res.halfwidth

    with pytest.raises(SamplerExhausted):
        smc_estimate(lambda c, n, rng: [("a",) * n] * (c - 1), p, SmcConfig(samples=10))
    with pytest.raises(SamplerExhausted):
        smc_estimate(lambda c, n, rng: [("a",)] * c, p, SmcConfig(samples=10))


def test_satisfied_matches_holds_on():
    rng = make_rng(6)
    for _ in range(30):
        d = random_small_model(rng)
        syms = d.alphabet.symbols
        k = int(rng.integers(0, 5))
        words = sample_traces(d, 50, rng, length=k + 1)
        left = {syms[0]}
        target = {syms[-1]}
        for p in (PropertySpec.eventually(target, k), PropertySpec.globally(target, k),
                  PropertySpec.until(left, target, k)):
            in_t = np.array([[s in p.target for s in w] for w in words])
            in_l = np.array([[s in (p.left or ()) for s in w] for w in words])
            assert satisfied(p, in_l, in_t).tolist() == [p.holds_on(w) for w in words]
