"""Command-line front end: ``robust-pomdp {gen,solve,transform,eval,info}``.

Exit codes: 0 success, 2 input error, 3 budget exhausted before convergence.
Diagnostics go to standard error at the level named by ROBUST_POMDP_LOG
(error, info or debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .benchmarks import (
    BirdParams,
    GenerationFailure,
    RockSampleParams,
    bird_fixture,
    gen_bird,
    gen_rocksample,
    prop1_fixture,
    rocksample_metadata,
)
from .gamelp import agent_lp
from .hsvi import SolveConfig, TraceRow, ab_hsvi, default_epsilon, solve_exact, solve_me, write_trace
from .model import INF, AbPomdp, MePomdp, ModelError, Pomdp, Posg, env_slice, single_env, validate
from .policy import MixedPolicy, agent_policy, env_values, evaluate_mixed, simulate
from .transforms import NotPoMemdp, StateSpaceOverflow, TransformError, ab_to_pomemdp, ab_to_posg, me_to_ab, pomemdp_to_mo

log = logging.getLogger("robust_pomdp")

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 2, 3


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _yn(flag: bool) -> str:
    return "yes" if flag else "no"


def info_line(m) -> str:
    if isinstance(m, MePomdp):
        return (
            f"me-pomdp, {m.num_states} states, {m.num_envs} envs, {m.num_actions} actions, "
            f"{m.num_observations} obs, PO-MEMDP: {_yn(m.is_pomemdp)}, MO-POMDP: {_yn(m.is_mopomdp)}"
        )
    if isinstance(m, AbPomdp):
        return (
            f"ab-pomdp, {m.num_states} states, {len(m.belief_support)} initial states, "
            f"{m.num_actions} actions, {m.num_observations} obs"
        )
    if isinstance(m, Posg):
        return (
            f"posg, {m.num_states} states, {len(m.agent_actions)} agent actions, "
            f"{len(m.nature_actions)} nature actions, {len(m.observations)} obs"
        )
    return f"pomdp, {m.num_states} states, 1 envs, {m.num_actions} actions, {m.num_observations} obs"


def _load(path):
    try:
        return io.load_model(path)
    except FileNotFoundError:
        raise InputError(f"--model: no such file {path}") from None
    except (ModelError, KeyError, TypeError, ValueError) as err:
        raise InputError(f"--model: {err}") from None


def _load_valid(path):
    m = _load(path)
    problems = validate(m)
    if problems:
        raise InputError("model is invalid:\n" + "\n".join(f"  - {p}" for p in problems))
    return m


# --------------------------------------------------------------------------
# gen


def _bird_params(a) -> BirdParams:
    if a.states < 2:
        raise InputError("--states must be at least 2")
    if a.actions < 2:
        raise InputError("--actions must be at least 2")
    if a.experts < 1:
        raise InputError("--experts must be at least 1")
    return BirdParams(a.states, a.actions, a.experts, a.seed, a.variant, a.discount if a.discount else 0.95)


def _rock_params(a) -> RockSampleParams:
    if a.m < 1:
        raise InputError("-m must be positive")
    if not 1 <= a.g <= a.t:
        raise InputError("-g must satisfy 1 <= g <= t")
    if a.t > a.m * a.m - 1:
        raise InputError("-t must be at most m*m - 1")
    if a.placement != "random" and (a.t not in (2, 3) or a.m < 2):
        raise InputError("--placement nearby/far needs t in {2, 3} and m >= 2")
    disc = a.discount if a.discount else 0.95
    if not 0 < disc < 1:
        raise InputError("--discount must be in (0, 1)")
    return RockSampleParams(
        a.m, a.g, a.t, a.placement, a.seed, a.formulation, disc, a.exit_reward, 10.0, a.sensor_d0
    )


def cmd_gen(a) -> int:
    meta = None
    if a.bird:
        if a.fixture:
            m = bird_fixture()
        else:
            try:
                m = gen_bird(_bird_params(a))
            except GenerationFailure as err:
                raise InputError(f"--experts: {err}") from None
    elif a.prop1:
        m = prop1_fixture()
    else:
        p = _rock_params(a)
        m = gen_rocksample(p)
        if isinstance(m, AbPomdp):
            meta = rocksample_metadata(p)
    io.save_model(a.out, m, meta)
    if isinstance(m, AbPomdp):
        print(
            f"{m.num_states} states, {len(m.belief_support)} initial states, "
            f"{m.num_actions} actions, {m.num_observations} obs"
        )
    else:
        print(f"{m.num_states} states, {m.num_envs} envs, {m.num_actions} actions, {m.num_observations} obs")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve


def _belief_dict(p, names) -> dict:
    return {names[s]: float(p[s]) for s in np.flatnonzero(p)}


def _per_env_values(m, mp: MixedPolicy) -> list[float]:
    if isinstance(m, MePomdp):
        return [float(v) for v in env_values(m, mp)]
    if isinstance(m, AbPomdp):
        V = evaluate_mixed(m, mp)
        return [float(V[q]) for q in m.belief_support]
    return [float(m.initial_belief @ evaluate_mixed(m, mp))]


def cmd_solve(a) -> int:
    m = _load_valid(a.model)
    if isinstance(m, Posg):
        raise InputError("--model: posg files cannot be solved directly; solve the source ab-pomdp")
    if a.horizon is not None:
        if a.horizon < 1:
            raise InputError("--horizon must be positive")
        m = replace(m, horizon=a.horizon)
    exact = a.exact or m.horizon != INF
    if exact and m.horizon == INF:
        raise InputError("--exact needs --horizon for an infinite-horizon model")
    if a.epsilon is not None and not a.epsilon > 0:
        raise InputError("--epsilon must be positive")
    if not a.time_limit > 0:
        raise InputError("--time-limit must be positive")
    eps = a.epsilon if a.epsilon is not None else default_epsilon(m.reward)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = Path(a.trace) if a.trace else out / "trace.csv"
    cfg = SolveConfig(epsilon=eps, time_limit_s=a.time_limit, max_iterations=a.max_iterations)

    if isinstance(m, AbPomdp):
        if exact:
            sol = solve_exact(m)
            mp = agent_policy(sol.stack, sol.agent, indices=sol.columns)
            lo = hi = sol.value
            belief, converged, iters, trace, wall = sol.nature.belief.probs, True, 0, None, None
        else:
            res = ab_hsvi(m, cfg)
            Q = list(m.belief_support)
            elig = np.flatnonzero(res.lower.eligible(Q))
            ag = agent_lp([res.lower.matrix[i] for i in elig], Q)
            mp = agent_policy(res.lower, ag, indices=[res.lower.active[i] for i in elig])
            lo, hi, belief = res.lb_value, res.ub_value, res.worst_belief.probs
            converged, iters, trace, wall = res.converged, res.iterations, res.trace, res.wall_time_s
        names = m.states
    else:
        sol = solve_me(m, cfg, exact=exact)
        mp, lo, hi, converged = sol.policy, sol.lower, sol.upper, sol.converged
        if exact:
            belief, iters, trace, wall = sol.raw.nature.belief.probs, 0, None, None
        else:
            res = sol.raw
            belief, iters, trace, wall = res.worst_belief.probs, res.iterations, res.trace, res.wall_time_s
        names = sol.transformed.states

    if trace is None:
        trace = [TraceRow(0, 0.0, lo, hi, hi - lo)]
    if a.deterministic:
        trace = [r._replace(elapsed_s=0.0) for r in trace]
        wall = None
    write_trace(trace, trace_path)
    io.write_json(out / "policy.json", io.policy_to_dict(mp, m))
    values = _per_env_values(m, mp)
    result = {
        "solver": "exact" if exact else "ab-hsvi",
        "model": str(a.model),
        "config": {
            "epsilon": eps,
            "time_limit_s": a.time_limit,
            "horizon": io._horizon_out(m.horizon),
            "max_iterations": a.max_iterations,
        },
        "lb": lo,
        "ub": hi,
        "gap": hi - lo,
        "worst_belief": _belief_dict(belief, names),
        "converged": bool(converged),
        "iterations": iters,
        "wall_time_s": wall,
        "policy_file": "policy.json",
        "trace_file": str(trace_path.name if trace_path.parent == out else trace_path),
        "env_values": values,
        "policy_worst_case": min(values),
    }
    io.write_json(out / "result.json", result)
    status = "converged" if converged else "budget exhausted"
    print(f"lb {lo:.6g}  ub {hi:.6g}  gap {hi - lo:.3g}  ({status})")
    return EXIT_OK if converged else EXIT_BUDGET


# --------------------------------------------------------------------------
# transform


def cmd_transform(a) -> int:
    m = _load_valid(a.model)
    try:
        if a.to == "ab":
            if isinstance(m, Pomdp):
                m = single_env(m)
            if not isinstance(m, MePomdp):
                raise InputError("--to ab needs a pomdp or me-pomdp model")
            new, rec = me_to_ab(m)
        elif a.to in ("posg", "pomemdp"):
            if not isinstance(m, AbPomdp):
                raise InputError(f"--to {a.to} needs an ab-pomdp model")
            new, rec = (ab_to_posg if a.to == "posg" else ab_to_pomemdp)(m)
        else:
            if not isinstance(m, MePomdp):
                raise InputError("--to mo needs an me-pomdp model")
            new, rec = pomemdp_to_mo(m, cap=a.cap)
    except NotPoMemdp as err:
        raise InputError(f"--to mo: {err}") from None
    except (StateSpaceOverflow, TransformError) as err:
        raise InputError(f"--to {a.to}: {err}") from None
    io.save_model(a.out, new, {"transform": rec.kind.value, "source": str(a.model)})
    record = a.record or str(Path(a.out).with_suffix("")) + ".record.json"
    io.write_json(record, io.record_to_dict(rec))
    print(info_line(new))
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def _env_models(m) -> list:
    if isinstance(m, MePomdp):
        return [env_slice(m, i) for i in range(m.num_envs)]
    if isinstance(m, AbPomdp):
        out = []
        for q in m.belief_support:
            b = np.zeros(m.num_states)
            b[q] = 1.0
            out.append(m.at(b))
        return out
    return [m]


def _load_policy(path, m) -> MixedPolicy:
    try:
        return io.policy_from_dict(io.read_json(path), m)
    except FileNotFoundError:
        raise InputError(f"--policy: no such file {path}") from None
    except (ModelError, ValueError, TypeError) as err:
        raise InputError(f"--policy: {err}") from None


def cmd_eval(a) -> int:
    m = _load_valid(a.model)
    if isinstance(m, Posg):
        raise InputError("--model: posg files cannot be evaluated")
    if a.horizon is not None:
        m = replace(m, horizon=a.horizon)
    mp = _load_policy(a.policy, m)
    envs = _env_models(m)
    report: dict = {"model": str(a.model), "policy": str(a.policy), "num_envs": len(envs)}
    do_exact = a.exact or not a.episodes
    if do_exact:
        vals = [float(e.initial_belief @ evaluate_mixed(e, mp)) for e in envs]
        report["exact"] = {"env_values": vals, "worst_case": min(vals), "worst_env": int(np.argmin(vals))}
        print(f"exact worst-case {min(vals):.6g} (env {int(np.argmin(vals))})")
    if a.episodes < 0:
        raise InputError("--episodes must be positive")
    if a.episodes:
        if a.jobs < 1:
            raise InputError("--jobs must be positive")
        cap = a.horizon_cap
        with ThreadPoolExecutor(max_workers=a.jobs) as pool:
            rows = list(pool.map(lambda e: simulate(e, mp, a.episodes, cap, seed=a.seed), envs))
        means = [r[0] for r in rows]
        report["monte_carlo"] = {
            "episodes": a.episodes,
            "seed": a.seed,
            "horizon_cap": cap,
            "env_values": [{"mean": mu, "se": se} for mu, se in rows],
            "worst_case": min(means),
        }
        print(f"monte-carlo worst-case {min(means):.6g} over {a.episodes} episodes per env")
    if a.env_policies:
        if len(a.env_policies) != len(envs):
            raise InputError(f"--env-policies: expected {len(envs)} files, got {len(a.env_policies)}")
        own = [_load_policy(p, m) for p in a.env_policies]
        cross = [[float(e.initial_belief @ evaluate_mixed(e, pol)) for e in envs] for pol in own]
        off = [cross[i][j] for i in range(len(envs)) for j in range(len(envs)) if i != j]
        report["cross_matrix"] = cross
        report["optimal_values"] = [cross[i][i] for i in range(len(envs))]
        report["worst_misassumed"] = min(off) if off else None
    text = io.dumps(report)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# info


def cmd_info(a) -> int:
    m = _load(a.model)
    print(info_line(m))
    problems = validate(m)
    if problems:
        print("invalid:")
        for p in problems:
            print(f"  - {p}")
        return EXIT_INPUT
    print("valid")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-pomdp", description="Robust planning for multi-environment POMDPs.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark model")
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--bird", action="store_true")
    which.add_argument("--rocksample", action="store_true")
    which.add_argument("--prop1", action="store_true", help="two-environment instance where only mixing is optimal")
    g.add_argument("--fixture", action="store_true", help="the fixed three-expert bird model")
    g.add_argument("--states", type=int, default=3)
    g.add_argument("--actions", type=int, default=2)
    g.add_argument("--experts", type=int, default=2)
    g.add_argument("--variant", choices=["me", "pomemdp", "mopomdp"], default="me")
    g.add_argument("-m", type=int, default=2, help="grid size")
    g.add_argument("-g", type=int, default=1, help="good rocks")
    g.add_argument("-t", type=int, default=2, help="total rocks")
    g.add_argument("--placement", choices=["random", "nearby", "far"], default="nearby")
    g.add_argument("--formulation", choices=["me", "ab"], default="me")
    g.add_argument("--exit-reward", type=float, default=10.0)
    g.add_argument("--sensor-d0", type=float, default=None, help="check-sensor half-efficiency distance (default m/2)")
    g.add_argument("--discount", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve a model robustly")
    s.add_argument("--model", required=True)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--time-limit", type=float, default=3600.0)
    s.add_argument("--max-iterations", type=int, default=None)
    s.add_argument("--exact", action="store_true")
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--trace", default=None)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--deterministic", action="store_true", help="omit wall-clock timings from outputs")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("transform", help="apply a model reduction")
    t.add_argument("--model", required=True)
    t.add_argument("--to", choices=["posg", "ab", "pomemdp", "mo"], required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--record", default=None)
    t.add_argument("--cap", type=int, default=1_000_000, help="state limit for the product construction")
    t.set_defaults(func=cmd_transform)

    e = sub.add_parser("eval", help="evaluate a policy per environment")
    e.add_argument("--model", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--exact", action="store_true")
    e.add_argument("--episodes", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--horizon", type=int, default=None)
    e.add_argument("--horizon-cap", type=int, default=200)
    e.add_argument("--jobs", type=int, default=1, help="environments simulated in parallel")
    e.add_argument("--env-policies", nargs="+", default=None, help="one optimal policy per environment")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="summarize and validate a model")
    i.add_argument("--model", required=True)
    i.set_defaults(func=cmd_info)
    return ap


def _setup_logging() -> None:
    level = os.environ.get("ROBUST_POMDP_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"{args.command}: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
