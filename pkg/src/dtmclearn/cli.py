"""Command-line entry point: ``dtmclearn <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numeric or convergence failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import aalergia, fileformat, ga, harness, model, properties, pst, smc, traces

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cmd_sample(a) -> int:
    d = fileformat.read_dtmc(a.model)
    if (a.fixed_len is None) == (a.stop_prob is None):
        raise UsageError("give exactly one of --fixed-len or --stop-prob")
    tr = model.sample_traces(d, a.count, model.make_rng(a.seed), length=a.fixed_len, stop_prob=a.stop_prob)
    traces.write_traces(tr, a.out)
    return EXIT_OK


def _ga_params(a) -> ga.GaParams:
    return ga.GaParams(
        population=a.pop,
        generations=a.gens,
        selection=a.select,
        crossover=a.xover,
        mu=a.mu,
        seed=a.seed,
        workers=a.workers,
    )


def _cmd_learn(a) -> int:
    if a.algo in ("aalergia", "ga"):
        ts = traces.read_traces(a.traces, "multi")
        if a.algo == "ga":
            learned = ga.learn_ga(ts, _ga_params(a))
        elif a.epsilon is not None:
            learned = aalergia.learn_aalergia(ts, a.epsilon)
        else:
            lo, hi = a.epsilon_search or (2.0**-10, 2.0**10)
            eps, learned, _ = aalergia.select_epsilon_bic(ts, aalergia.EpsilonSearchConfig(lo=lo, hi=hi, mu=a.mu))
            print(f"epsilon={eps!r}")
    else:
        alpha, _ = traces.read_traces(a.traces, "single")
        if a.algo == "pst":
            learned = pst.learn_pst_dtmc(alpha, a.epsilon if a.epsilon is not None else 0.01, a.max_depth)
        else:
            learned = pst.learn_ga_single(alpha, _ga_params(a), a.max_depth)
    fileformat.write_dtmc(learned, a.out)
    print(f"states={learned.n}")
    return EXIT_OK


def _cmd_check(a) -> int:
    d = fileformat.read_dtmc(a.model)
    print(repr(properties.check_property(d, properties.parse_property(a.prop))))
    return EXIT_OK


def _cmd_steady(a) -> int:
    d = fileformat.read_dtmc(a.model)
    print(" ".join(repr(float(x)) for x in model.steady_state(d)))
    return EXIT_OK


def _cmd_smc(a) -> int:
    d = fileformat.read_dtmc(a.model)
    if (a.samples is None) == (a.halfwidth is None):
        raise UsageError("give exactly one of --samples or --halfwidth")
    cfg = smc.SmcConfig(delta=a.confidence, samples=a.samples, halfwidth=a.halfwidth, seed=a.seed)
    print(smc.smc_estimate(d, properties.parse_property(a.prop), cfg))
    return EXIT_OK


def _cmd_randgen(a) -> int:
    symbols = [f"s{i}" for i in range(a.symbols)]
    d = model.random_dtmc(a.states, a.density, symbols, model.make_rng(a.seed))
    fileformat.write_dtmc(d, a.out)
    return EXIT_OK


def _cmd_eval(a) -> int:
    spec = harness.ExperimentSpec.load(a.spec)
    rows = harness.run_experiment(spec, a.out)
    print(f"rows={len(rows)}")
    return EXIT_OK


def _cmd_bic_sweep(a) -> int:
    ts = traces.read_traces(a.traces, "multi")
    lo, hi, steps = a.grid
    rows = harness.bic_sweep(ts, harness.log_grid(float(lo), float(hi), int(steps)), a.mu)
    harness.write_sweep(rows, a.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dtmclearn", description="Learn and check discrete-time Markov chains from traces.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample traces from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--fixed-len", type=int)
    s.add_argument("--stop-prob", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_sample)

    s = sub.add_parser("learn", help="learn a model from traces")
    s.add_argument("--algo", choices=["aalergia", "ga", "pst", "ga-single"], required=True)
    s.add_argument("--traces", required=True)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--epsilon-search", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--mu", type=float, default=0.5)
    s.add_argument("--pop", type=int, default=64)
    s.add_argument("--gens", type=int, default=50)
    s.add_argument("--select", choices=ga.SELECTIONS, default="tournament")
    s.add_argument("--xover", choices=ga.CROSSOVERS, default="two")
    s.add_argument("--max-depth", type=int, default=pst.DEFAULT_MAX_DEPTH)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_learn)

    s = sub.add_parser("check", help="exact probability of a property")
    s.add_argument("--model", required=True)
    s.add_argument("--prop", required=True)
    s.set_defaults(func=_cmd_check)

    s = sub.add_parser("steady", help="steady-state distribution")
    s.add_argument("--model", required=True)
    s.set_defaults(func=_cmd_steady)

    s = sub.add_parser("smc", help="statistical estimate of a bounded property")
    s.add_argument("--model", required=True)
    s.add_argument("--prop", required=True)
    s.add_argument("--confidence", type=float, default=0.01)
    s.add_argument("--samples", type=int)
    s.add_argument("--halfwidth", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_smc)

    s = sub.add_parser("randgen", help="generate a random model")
    s.add_argument("--states", type=int, required=True)
    s.add_argument("--density", type=float, required=True)
    s.add_argument("--symbols", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_randgen)

    s = sub.add_parser("eval", help="run an experiment spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("bic-sweep", help="|BIC| of AALERGIA models over a geometric epsilon grid")
    s.add_argument("--traces", required=True)
    s.add_argument("--grid", nargs=3, required=True, metavar=("LO", "HI", "STEPS"))
    s.add_argument("--mu", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_bic_sweep)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (model.ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
