"""AB-HSVI: heuristic search value iteration restarted at LP-computed worst-case beliefs."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .bounds import (
    GammaStack,
    LowerBound,
    UpperBound,
    backup,
    blind_bound,
    exact_gamma,
    fib_bound,
)
from .gamelp import AgentSolution, NatureSolution, agent_lp, nature_lp
from .model import INF, AbPomdp, Belief, MePomdp, Pomdp, as_probs, single_env
from .policy import MixedPolicy, agent_policy
from .transforms import TransformRecord, lift_policy, me_to_ab

log = logging.getLogger(__name__)


def default_epsilon(reward: np.ndarray) -> float:
    """A tenth of the smallest nonzero reward magnitude (1.0 if all rewards are zero)."""
    mags = np.abs(np.asarray(reward))
    mags = mags[mags > 0]
    return 0.1 * float(mags.min()) if mags.size else 0.1


def default_max_depth(discount: float, epsilon: float, reward: np.ndarray) -> int:
    spread = float(np.max(reward) - np.min(reward))
    if spread <= 0 or discount <= 0:
        return 5
    ratio = epsilon * (1.0 - discount) / spread
    if ratio >= 1:
        return 5
    return int(math.ceil(math.log(ratio) / math.log(discount))) + 5


@dataclass
class SolveConfig:
    epsilon: float | None = None
    time_limit_s: float = 3600.0
    max_depth: int | None = None
    rng_seed: int = 0
    trace_path: str | None = None
    weighted_excess: bool = True
    bound_tol: float = 1e-6
    max_iterations: int | None = None
    # called after every outer iteration with (iteration, lower bound, upper bound)
    on_iteration: object = None

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.time_limit_s > 0:
            raise ValueError("time_limit_s must be positive")


class TraceRow(NamedTuple):
    iteration: int
    elapsed_s: float
    lb: float
    ub: float
    gap: float


@dataclass
class SolveResult:
    lower: LowerBound
    upper: UpperBound
    worst_belief: Belief
    lb_value: float
    ub_value: float
    converged: bool
    iterations: int
    wall_time_s: float
    epsilon: float
    trace: list[TraceRow] = field(default_factory=list)
    depth_limit_hits: int = 0

    @property
    def gap(self) -> float:
        return self.ub_value - self.lb_value


class _Timeout(Exception):
    pass


def gap(ub: UpperBound, lb: LowerBound, b) -> float:
    return ub.value(b) - lb.value(b)


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "elapsed_s", "lb", "ub", "gap"])
        for r in rows:
            w.writerow([r.iteration] + [f"{x:.9g}" for x in r[1:]])


class _Search:
    """State shared by one solve's depth-first explorations."""

    def __init__(self, m, ub, lb, epsilon, max_depth, weighted, deadline):
        self.m = m
        self.ub = ub
        self.lb = lb
        self.eps = epsilon
        self.max_depth = max_depth
        self.weighted = weighted
        self.deadline = deadline
        self.depth_hits = 0

    def lookahead(self, p):
        """Per allowed action: (upper-bound Q value, action, Pr(z), successor beliefs, their upper bounds).

        Successors of zero-probability observations are left as zero rows.
        """
        m = self.m
        g = m.discount
        allowed = np.flatnonzero(m.allowed_actions(np.flatnonzero(p > 0)))
        out = []
        for a in allowed:
            Bz = np.einsum("s,zst->zt", p, m.joint[a])
            pz = Bz.sum(axis=1)
            live = pz > 1e-12
            Bz[live] /= pz[live, None]
            Bz[~live] = 0.0
            ubz = np.zeros(len(pz))
            if live.any():
                ubz[live] = self.ub.values(Bz[live])
            q = float(p @ m.reward[:, a]) + g * float(pz[live] @ ubz[live])
            out.append((q, int(a), pz, Bz, ubz))
        return out

    def explore(self, p, t):
        if self.deadline is not None and time.perf_counter() > self.deadline:
            raise _Timeout
        g = self.m.discount
        threshold = self.eps * g ** (-t)
        if self.ub.value(p) - self.lb.value(p) <= threshold:
            return
        if t >= self.max_depth:
            self.depth_hits += 1
            return
        look = self.lookahead(p)
        q, a, pz, Bz, ubz = max(look, key=lambda x: (x[0], -x[1]))
        live = np.flatnonzero(pz > 1e-12)
        if live.size:
            excess = ubz[live] - self.lb.values(Bz[live])
            if self.weighted:
                score = pz[live] * (excess - self.eps * g ** (-(t + 1)))
            else:
                score = excess
            # first maximizer, matching a left-to-right scan over observations
            self.explore(Bz[live[int(np.argmax(score))]], t + 1)
        self.update(p)

    def update(self, p):
        alpha = backup(self.m, self.lb, p)
        if float(alpha.values @ p) > self.lb.value(p) + 1e-12:
            self.lb.insert(alpha)
        look = self.lookahead(p)
        self.ub.insert(p, max(x[0] for x in look))


def explore(m, ub: UpperBound, lb: LowerBound, b, t: int, cfg: SolveConfig) -> None:
    """One depth-first HSVI trial from belief ``b`` at depth ``t``."""
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(m.reward)
    depth = cfg.max_depth if cfg.max_depth is not None else default_max_depth(m.discount, eps, m.reward)
    _Search(m, ub, lb, eps, depth, cfg.weighted_excess, None).explore(as_probs(b), t)


def _nature_on_q(m, lb: LowerBound, Q) -> NatureSolution:
    elig = lb.eligible(Q)
    vecs = [v for v, e in zip(lb.matrix, elig) if e]
    return nature_lp(vecs, Q, m.num_states)


def ab_hsvi(m: AbPomdp, cfg: SolveConfig | None = None) -> SolveResult:
    cfg = cfg or SolveConfig()
    if not 0 < m.discount < 1:
        raise ValueError("AB-HSVI needs a discount in (0, 1)")
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(m.reward)
    depth = cfg.max_depth if cfg.max_depth is not None else default_max_depth(m.discount, eps, m.reward)
    t0 = time.perf_counter()
    deadline = t0 + cfg.time_limit_s
    ub = UpperBound(fib_bound(m, cfg.bound_tol))
    lb = LowerBound(m, blind_bound(m, cfg.bound_tol))
    search = _Search(m, ub, lb, eps, depth, cfg.weighted_excess, deadline)
    Q = list(m.belief_support)
    trace: list[TraceRow] = []
    converged = False
    it = 0
    nat = _nature_on_q(m, lb, Q)
    try:
        while True:
            p = nat.belief.probs
            lo, hi = lb.value(p), ub.value(p)
            trace.append(TraceRow(it, time.perf_counter() - t0, lo, hi, hi - lo))
            log.debug("iter %d lb %.6g ub %.6g gap %.6g", it, lo, hi, hi - lo)
            if cfg.on_iteration is not None:
                cfg.on_iteration(it, lb, ub)
            if hi - lo < eps:
                converged = True
                break
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                break
            if time.perf_counter() > deadline:
                break
            search.explore(p, 0)
            it += 1
            nat = _nature_on_q(m, lb, Q)
    except _Timeout:
        nat = _nature_on_q(m, lb, Q)
        p = nat.belief.probs
        lo, hi = lb.value(p), ub.value(p)
        trace.append(TraceRow(it, time.perf_counter() - t0, lo, hi, hi - lo))
    p = nat.belief.probs
    lo, hi = lb.value(p), ub.value(p)
    result = SolveResult(
        lower=lb,
        upper=ub,
        worst_belief=nat.belief,
        lb_value=lo,
        ub_value=hi,
        converged=converged,
        iterations=it,
        wall_time_s=time.perf_counter() - t0,
        epsilon=eps,
        trace=trace,
        depth_limit_hits=search.depth_hits,
    )
    if cfg.trace_path:
        write_trace(trace, cfg.trace_path)
    return result


# --------------------------------------------------------------------------
# exact finite horizon


class ExactSolution(NamedTuple):
    value: float
    nature: NatureSolution
    agent: AgentSolution
    stack: GammaStack
    # indices into stack.top of the LP columns (vectors eligible on Q)
    columns: tuple[int, ...]


def solve_exact(m: AbPomdp, H: int | None = None, cap: int = 1_000_000) -> ExactSolution:
    """Exact robust value over Δ(Q) at a finite horizon."""
    H = m.horizon if H is None else H
    if H == INF:
        raise ValueError("exact solution needs a finite horizon")
    Q = list(m.belief_support)
    stack = exact_gamma(m, int(H), prune=True, support=Q, cap=cap)
    allowed = m.allowed_actions(Q)
    cols = tuple(i for i, v in enumerate(stack.top) if allowed[v.action])
    vecs = [stack.top[i].values for i in cols]
    nat = nature_lp(vecs, Q, m.num_states)
    ag = agent_lp(vecs, Q)
    return ExactSolution(nat.value, nat, ag, stack, cols)


# --------------------------------------------------------------------------
# ME-POMDP front end


@dataclass
class RobustSolution:
    lower: float
    upper: float
    converged: bool
    policy: MixedPolicy
    transformed: AbPomdp
    record: TransformRecord
    raw: object  # SolveResult or ExactSolution
    agent: AgentSolution

    @property
    def value(self) -> float:
        return self.lower


def solve_me(
    m: MePomdp | Pomdp,
    cfg: SolveConfig | None = None,
    exact: bool = False,
    horizon: int | None = None,
) -> RobustSolution:
    """Robust solve of an ME-POMDP through its AB-POMDP encoding.

    Values come back on the original model's scale: the encoding already
    compensates the extra stage. A plain POMDP is treated as one environment.
    """
    if isinstance(m, Pomdp):
        m = single_env(m)
    ab, rec = me_to_ab(m)
    if exact or m.horizon != INF:
        H = ab.horizon if horizon is None else int(horizon) + 1
        sol = solve_exact(ab, H)
        mp = agent_policy(sol.stack, _renormalised(sol.agent), indices=sol.columns)
        return RobustSolution(sol.value, sol.value, True, lift_policy(rec, mp), ab, rec, sol, sol.agent)
    cfg = cfg or SolveConfig()
    if cfg.epsilon is None:
        cfg = _with_epsilon(cfg, default_epsilon(m.reward))
    res = ab_hsvi(ab, cfg)
    Q = list(ab.belief_support)
    elig = np.flatnonzero(res.lower.eligible(Q))
    vecs = [res.lower.matrix[i] for i in elig]
    ag = agent_lp(vecs, Q)
    columns = [res.lower.active[i] for i in elig]
    mp = agent_policy(res.lower, _renormalised(ag), indices=columns)
    return RobustSolution(res.lb_value, res.ub_value, res.converged, lift_policy(rec, mp), ab, rec, res, ag)


def _with_epsilon(cfg: SolveConfig, eps: float) -> SolveConfig:
    from dataclasses import replace

    return replace(cfg, epsilon=eps)


def _renormalised(sol: AgentSolution) -> AgentSolution:
    w = np.clip(sol.weights, 0.0, None)
    return AgentSolution(w / w.sum(), sol.value)
