"""Learning discrete-time Markov chains from traces and checking them."""

from .aalergia import EpsilonSearchConfig, learn_aalergia, select_epsilon_bic
from .fileformat import read_dtmc, write_dtmc
from .ga import GaParams, learn_ga, run_ga
from .model import (
    Alphabet,
    ConvergenceError,
    Dtmc,
    log_likelihood,
    make_rng,
    random_dtmc,
    sample_traces,
    steady_state,
    string_probability,
    validate_dtmc,
)
from .properties import PropertySpec, check_property, parse_property
from .pst import learn_ga_single, learn_pst, pst_to_dtmc
from .smc import SmcConfig, smc_estimate
from .traces import TraceSet, build_prefix_tree, parse_traces

__all__ = [
    "Alphabet",
    "ConvergenceError",
    "Dtmc",
    "EpsilonSearchConfig",
    "GaParams",
    "PropertySpec",
    "SmcConfig",
    "TraceSet",
    "build_prefix_tree",
    "check_property",
    "learn_aalergia",
    "learn_ga",
    "learn_ga_single",
    "learn_pst",
    "log_likelihood",
    "make_rng",
    "parse_property",
    "parse_traces",
    "pst_to_dtmc",
    "random_dtmc",
    "read_dtmc",
    "run_ga",
    "sample_traces",
    "select_epsilon_bic",
    "smc_estimate",
    "steady_state",
    "string_probability",
    "validate_dtmc",
    "write_dtmc",
]
