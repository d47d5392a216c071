"""Accuracy metrics, epsilon sweeps and reproducible experiment runs."""

from __future__ import annotations

import csv
import decimal
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .aalergia import EpsilonSearchConfig, bic_score, learn_aalergia, select_epsilon_bic
from .fileformat import read_dtmc, write_dtmc
from .ga import GaParams, learn_ga
from .model import ConvergenceError, Dtmc, log_string_probability, make_rng, random_dtmc, sample_traces, steady_state
from .model import string_probability
from .properties import check_property, parse_property
from .pst import learn_ga_single, learn_pst_dtmc
from .smc import SmcConfig, smc_estimate
from .traces import TraceSet, build_prefix_tree, write_traces

# -- metrics -------------------------------------------------------------------


# Metrics run in decimal on the shortest repr of each input, so values given
# in decimal (0.48, 0.5) produce the correctly rounded decimal answer (0.04)
# rather than the binary rounding noise of float subtraction.
_DEC = decimal.Context(prec=40)


def _dec(x) -> decimal.Decimal:
    return decimal.Decimal(repr(float(x)))


def ard(p_est: float, p_act: float) -> float:
    """Absolute relative difference; NaN when the actual probability is 0."""
    if p_act == 0:
        return math.nan
    if not (math.isfinite(p_est) and math.isfinite(p_act)):
        return abs(p_est - p_act) / p_act
    return float(_DEC.divide(abs(_DEC.subtract(_dec(p_est), _dec(p_act))), _dec(p_act)))


def mse_steady(y_hat: Sequence[float], y: Sequence[float]) -> float:
    a, b = np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty vectors")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        return float(np.mean((a - b) ** 2))
    total = decimal.Decimal(0)
    for u, v in zip(a.ravel(), b.ravel()):
        d = _DEC.subtract(_dec(u), _dec(v))
        total = _DEC.add(total, _DEC.multiply(d, d))
    return float(_DEC.divide(total, a.size))


def label_steady_state(d: Dtmc, symbols: Sequence[str] | None = None) -> np.ndarray:
    """Steady-state mass per symbol, in the order of ``symbols``."""
    symbols = d.alphabet.symbols if symbols is None else symbols
    pi = steady_state(d)
    per_label = np.bincount(d.labels, weights=pi, minlength=len(d.alphabet))
    return np.array([per_label[d.alphabet.index[s]] if s in d.alphabet else 0.0 for s in symbols])


def prediction_accuracy(model: Dtmc, td: Sequence[str]) -> float:
    """Per-observation geometric mean probability ``P(td) ** (1 / |td|)``."""
    if not td:
        raise ValueError("test trace must be non-empty")
    p = string_probability(model, td)
    if p >= sys.float_info.min:
        return p ** (1.0 / len(td))
    logp = log_string_probability(model, td)
    return 0.0 if logp == -math.inf else math.exp(logp / len(td))


# -- epsilon sweep -------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    epsilon: float
    abs_bic: float
    states: int


def bic_sweep(pi: TraceSet, grid: Sequence[float], mu: float = 0.5) -> list[SweepPoint]:
    grid = list(grid)
    if not grid:
        raise ValueError("empty epsilon grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be strictly ascending")
    tree = build_prefix_tree(pi)
    rows = []
    for eps in grid:
        model = learn_aalergia(tree, eps)
        bic, _ = bic_score(model, tree, mu)
        rows.append(SweepPoint(float(eps), abs(bic), model.n))
    return rows


def log_grid(lo: float, hi: float, steps: int) -> list[float]:
    """``steps`` geometrically spaced values from ``lo`` to ``hi``."""
    if steps < 1 or not 0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi and steps >= 1")
    if steps == 1:
        return [float(lo)]
    return [float(x) for x in np.geomspace(lo, hi, steps)]


def write_sweep(rows: Sequence[SweepPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "abs_bic", "states"])
        for r in rows:
            w.writerow([repr(r.epsilon), repr(r.abs_bic), r.states])


def strict_interior_maxima(values: Sequence[float]) -> list[int]:
    return [i for i in range(1, len(values) - 1) if values[i - 1] < values[i] > values[i + 1]]


def two_cluster_model(switch: float = 0.6, stay: float = 0.9) -> Dtmc:
    """Two disconnected chains over {a, b}, entered with equal probability.

    In the first chain the label changes with probability ``switch``; in the
    second it repeats with probability ``stay``.
    """
    p, q = switch, stay
    trans = [
        [1 - p, p, 0.0, 0.0],
        [p, 1 - p, 0.0, 0.0],
        [0.0, 0.0, q, 1 - q],
        [0.0, 0.0, 1 - q, q],
    ]
    return Dtmc(("a", "b"), [0.5, 0.0, 0.5, 0.0], trans, [0, 1, 0, 1])


# With these defaults the |BIC| sweep over TWO_CLUSTER_GRID peaks strictly
# inside the grid before the clusters collapse into one state per symbol.
TWO_CLUSTER_GRID = (2.0**-10, 2.0**10, 21)


def two_cluster_traces(count: int = 200, seed: int = 0, stop_prob: float = 0.05) -> TraceSet:
    d = two_cluster_model()
    return TraceSet.from_sequences(sample_traces(d, count, make_rng(seed), stop_prob=stop_prob), d.alphabet)


# -- experiments ---------------------------------------------------------------

LEARNERS = ("aalergia", "ga", "pst", "ga-single")
METRICS = ("ard", "mse", "accuracy", "states", "bic")
SINGLE = ("pst", "ga-single")


@dataclass
class ExperimentSpec:
    """One experiment: a generator, learners, a size schedule and metrics.

    ``generator`` holds either ``path`` (a model file) or ``states``,
    ``density`` and ``symbols`` for a random model. Multi-trace learners get
    ``size`` traces; single-trace learners one trace of ``size`` symbols.
    """

    generator: dict
    learners: list[dict]
    sizes: list[int]
    properties: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=lambda: ["ard", "states"])
    seed: int = 0
    stop_prob: float = 0.2
    test_traces: int = 100
    test_length: int = 20
    smc: dict | None = None
    record_time: bool = False
    out: str | None = None

    def __post_init__(self):
        if not self.learners:
            raise ValueError("at least one learner is required")
        if not self.metrics:
            raise ValueError("at least one metric is required")
        for m in self.metrics:
            if m not in METRICS:
                raise ValueError(f"unknown metric {m!r}; choose from {METRICS}")
        for lr in self.learners:
            if lr.get("name") not in LEARNERS:
                raise ValueError(f"unknown learner {lr.get('name')!r}; choose from {LEARNERS}")
        if not self.sizes or any(b <= a for a, b in zip(self.sizes, self.sizes[1:])) or self.sizes[0] < 1:
            raise ValueError("sizes must be positive and strictly increasing")
        if "path" not in self.generator and "states" not in self.generator:
            raise ValueError("generator needs a model path or random-model parameters")
        self.parsed_properties = [parse_property(p) for p in self.properties]
        if self.smc is not None and any(p.bound is None for p in self.parsed_properties):
            raise ValueError("statistical checking needs bounded properties")

    @classmethod
    def from_toml(cls, text: str, base: Path | None = None) -> "ExperimentSpec":
        data = tomllib.loads(text)
        gen = dict(data.get("generator", {}))
        if "path" in gen and base is not None:
            gen["path"] = str((base / gen["path"]).resolve())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        data["generator"] = gen
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        return cls.from_toml(path.read_text(encoding="utf-8"), path.parent)

    def generator_model(self) -> Dtmc:
        g = self.generator
        if "path" in g:
            return read_dtmc(g["path"])
        symbols = [f"s{i}" for i in range(int(g["symbols"]))]
        return random_dtmc(int(g["states"]), float(g["density"]), symbols, make_rng(self.seed, 0))


@dataclass(frozen=True)
class MetricRow:
    learner: str
    size: int
    wall_ms: int
    metric: str
    value: float

    def sort_key(self):
        return (self.learner, self.size, self.metric)


def _learn(spec: ExperimentSpec, cfg: dict, traces: TraceSet, alpha, seed: int) -> Dtmc:
    name = cfg["name"]
    mu = float(cfg.get("mu", 0.5))
    if name == "aalergia":
        if "epsilon" in cfg:
            return learn_aalergia(traces, float(cfg["epsilon"]))
        lo, hi = cfg.get("epsilon_range", (2.0**-10, 2.0**10))
        return select_epsilon_bic(traces, EpsilonSearchConfig(lo=lo, hi=hi, mu=mu))[1]
    if name == "pst":
        return learn_pst_dtmc(alpha, float(cfg.get("epsilon", 0.01)), int(cfg.get("max_depth", 8)))
    params = GaParams(
        population=int(cfg.get("population", 64)),
        generations=int(cfg.get("generations", 50)),
        selection=cfg.get("selection", "tournament"),
        crossover=cfg.get("crossover", "two"),
        mu=mu,
        seed=seed,
        workers=int(cfg.get("workers", 1)),
    )
    if name == "ga":
        return learn_ga(traces, params)
    return learn_ga_single(alpha, params, int(cfg.get("max_depth", 8)))


def run_experiment(spec: ExperimentSpec, out_dir=None) -> list[MetricRow]:
    """Sample, learn and score every (learner, size) cell.

    Writes ``results.csv`` (``learner,size,wall_ms,metric,value``, rows in
    canonical order) plus the generator, training and test traces and every
    learned model under ``out_dir``. Wall time is recorded in ``wall_ms``
    only with ``record_time``; otherwise the column is 0 so reruns are
    byte-identical, and timings go to ``timings.csv``. Rows gathered so far
    are written before an exception propagates.
    """
    out = Path(out_dir or spec.out or "results")
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    truth = spec.generator_model()
    write_dtmc(truth, out / "models" / "truth.dtmc")
    symbols = truth.alphabet.symbols

    true_probs = [check_property(truth, p) for p in spec.parsed_properties]
    needs_steady = "mse" in spec.metrics
    true_steady = label_steady_state(truth) if needs_steady else None
    test = sample_traces(truth, spec.test_traces, make_rng(spec.seed, 2), length=spec.test_length)
    write_traces(test, out / "traces" / "test.txt")

    rows: list[MetricRow] = []
    timings: list[tuple[str, int, float]] = []
    try:
        for si, size in enumerate(spec.sizes):
            traces = alpha = None
            if any(lr["name"] not in SINGLE for lr in spec.learners):
                traces = TraceSet(
                    sample_traces(truth, size, make_rng(spec.seed, 1, si), stop_prob=spec.stop_prob),
                    truth.alphabet,
                )
                write_traces(traces, out / "traces" / f"multi_{size}.txt")
            if any(lr["name"] in SINGLE for lr in spec.learners):
                alpha = sample_traces(truth, 1, make_rng(spec.seed, 3, si), length=size)[0]
                write_traces([alpha], out / "traces" / f"single_{size}.txt")

            for li, cfg in enumerate(spec.learners):
                label = cfg.get("label", cfg["name"])
                t0 = time.perf_counter()
                model = _learn(spec, cfg, traces, alpha, spec.seed * 1000 + si)
                ms = (time.perf_counter() - t0) * 1000.0
                timings.append((label, size, ms))
                write_dtmc(model, out / "models" / f"{label}_{size}.dtmc")
                wall = int(round(ms)) if spec.record_time else 0
                multi = traces if cfg["name"] not in SINGLE else None
                rows.extend(_score(spec, label, size, wall, model, true_probs, true_steady, symbols, test, multi))

            if spec.smc is not None:
                cfg = SmcConfig(delta=float(spec.smc.get("delta", 0.001)), samples=size, seed=spec.seed * 1000 + si)
                t0 = time.perf_counter()
                for i, (p, act) in enumerate(zip(spec.parsed_properties, true_probs)):
                    est = smc_estimate(truth, p, cfg).estimate
                    rows.append(MetricRow("smc", size, 0, f"prob_p{i}", est))
                    rows.append(MetricRow("smc", size, 0, f"ard_p{i}", ard(est, act)))
                timings.append(("smc", size, (time.perf_counter() - t0) * 1000.0))
    finally:
        _write_rows(rows, out / "results.csv")
        with open(out / "timings.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["learner", "size", "wall_ms"])
            for label, size, ms in timings:
                w.writerow([label, size, f"{ms:.3f}"])
    return sorted(rows, key=MetricRow.sort_key)


def _score(spec, label, size, wall, model, true_probs, true_steady, symbols, test, traces) -> list[MetricRow]:
    rows = [MetricRow(label, size, wall, f"true_p{i}", v) for i, v in enumerate(true_probs)]
    if "ard" in spec.metrics:
        for i, (p, act) in enumerate(zip(spec.parsed_properties, true_probs)):
            est = check_property(model, p)
            rows.append(MetricRow(label, size, wall, f"prob_p{i}", est))
            rows.append(MetricRow(label, size, wall, f"ard_p{i}", ard(est, act)))
    if "mse" in spec.metrics:
        try:
            value = mse_steady(label_steady_state(model, symbols), true_steady)
        except ConvergenceError:
            value = math.nan
        rows.append(MetricRow(label, size, wall, "mse_steady", value))
    if "accuracy" in spec.metrics:
        acc = float(np.mean([prediction_accuracy(model, td) for td in test]))
        rows.append(MetricRow(label, size, wall, "accuracy", acc))
    if "states" in spec.metrics:
        rows.append(MetricRow(label, size, wall, "states", float(model.n)))
    if "bic" in spec.metrics and traces is not None:
        tree = build_prefix_tree(traces)
        rows.append(MetricRow(label, size, wall, "bic", bic_score(model, tree, 0.5)[0]))
    return rows


def _write_rows(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["learner", "size", "wall_ms", "metric", "value"])
        for r in sorted(rows, key=MetricRow.sort_key):
            w.writerow([r.learner, r.size, r.wall_ms, r.metric, repr(float(r.value))])


def read_rows(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        return [
            MetricRow(r["learner"], int(r["size"]), int(r["wall_ms"]), r["metric"], float(r["value"]))
            for r in csv.DictReader(fh)
        ]
