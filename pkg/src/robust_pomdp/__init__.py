"""Robust planning for POMDPs with several candidate environments.

The main entry points are :func:`solve_me` (multi-environment POMDPs),
:func:`ab_hsvi` (adversarial initial beliefs) and :func:`solve_exact`
(finite horizons).
"""

from .benchmarks import (
    BirdParams,
    GenerationFailure,
    RockSampleParams,
    bird_fixture,
    gen_bird,
    gen_rocksample,
    prop1_fixture,
)
from .bounds import AlphaVector, GammaStack, LowerBound, UpperBound, backup, blind_bound, exact_gamma, fib_bound
from .gamelp import AgentSolution, NatureSolution, agent_lp, nature_lp
from .hsvi import SolveConfig, SolveResult, ab_hsvi, solve_exact, solve_me
from .model import AbPomdp, Belief, MePomdp, Pomdp, Posg, belief_update, env_slice, validate
from .policy import (
    MixedPolicy,
    PolicyGraph,
    PolicyNode,
    env_values,
    evaluate_fsc_exact,
    extract_policy,
    mixed_to_behavioral,
    simulate,
)
from .transforms import ab_to_pomemdp, ab_to_posg, lift_policy, me_to_ab, pomemdp_to_mo

__all__ = [
    "AbPomdp",
    "AgentSolution",
    "AlphaVector",
    "Belief",
    "BirdParams",
    "GammaStack",
    "GenerationFailure",
    "LowerBound",
    "MePomdp",
    "MixedPolicy",
    "NatureSolution",
    "PolicyGraph",
    "PolicyNode",
    "Pomdp",
    "Posg",
    "RockSampleParams",
    "SolveConfig",
    "SolveResult",
    "UpperBound",
    "ab_hsvi",
    "ab_to_pomemdp",
    "ab_to_posg",
    "agent_lp",
    "backup",
    "belief_update",
    "bird_fixture",
    "blind_bound",
    "env_slice",
    "env_values",
    "evaluate_fsc_exact",
    "exact_gamma",
    "extract_policy",
    "fib_bound",
    "gen_bird",
    "gen_rocksample",
    "lift_policy",
    "me_to_ab",
    "mixed_to_behavioral",
    "nature_lp",
    "pomemdp_to_mo",
    "prop1_fixture",
    "simulate",
    "solve_exact",
    "solve_me",
    "validate",
]
