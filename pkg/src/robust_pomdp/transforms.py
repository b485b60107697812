"""Value-preserving model reductions between POSG, AB-POMDP, ME-POMDP and MO-POMDP forms.

The sentinel reductions prepend one stage: a start state (or one per
environment) from which the adversary's choice is injected, observed as a
dummy observation ``TOP`` while the agent may only play a fixed action
``diamond``. Rewards are divided by γ to undo the extra discount step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .model import INF, AbPomdp, MePomdp, ModelError, Pomdp, Posg

TOP = "_top"


class TransformError(ModelError):
    pass


class InvalidDiscount(TransformError):
    pass


class NotPoMemdp(TransformError):
    pass


class StateSpaceOverflow(TransformError):
    pass


class TransformKind(str, Enum):
    AB_TO_POSG = "AbToPosg"
    ME_TO_AB = "MeToAb"
    AB_TO_POMEMDP = "AbToPomemdp"
    POMEMDP_TO_MO = "PomemdpToMo"


@dataclass(frozen=True)
class SentinelInfo:
    bottom_states: tuple[int, ...]
    top_observation: int
    diamond_action: int
    reward_scale: float
    horizon_shift: int = 1


@dataclass(frozen=True)
class TransformRecord:
    kind: TransformKind
    # new state index -> (original state or None for a bottom state, tag tuple)
    state_map: tuple[tuple, ...]
    sentinel: SentinelInfo | None = None
    extra: dict = field(default_factory=dict)


def _check_discount(discount: float) -> float:
    if discount <= 0.0:
        raise InvalidDiscount("sentinel reductions need a positive discount (rewards are scaled by 1/γ)")
    return 1.0 / discount


def _fresh(base: str, taken) -> str:
    """``base`` with primes appended until it no longer clashes with ``taken``."""
    taken = set(taken)
    while base in taken:
        base += "'"
    return base


def _shift(h):
    return INF if h == INF else int(h) + 1


def _diamond_mask(num_states: int, num_actions: int, bottoms, diamond: int, base=None):
    mask = np.ones((num_states, num_actions), dtype=bool) if base is None else base
    for s in bottoms:
        mask[s] = False
        mask[s, diamond] = True
    return mask


def _lifted_available(base_mask, index_of, num_states, num_actions):
    """Expand an availability mask over original states to the staged state space."""
    out = np.ones((num_states, num_actions), dtype=bool)
    if base_mask is not None:
        for new, orig in index_of:
            out[new] = base_mask[orig]
    return out


# --------------------------------------------------------------------------
# ME-POMDP -> AB-POMDP


def me_to_ab(m: MePomdp, diamond: int = 0) -> tuple[AbPomdp, TransformRecord]:
    """Encode the environment choice as an adversarial initial belief.

    States: ``⊥_i`` for each environment first, then ``(s, i, j)`` with
    stage ``j`` in {1, 2}. Observation ``TOP`` is appended last.
    """
    scale = _check_discount(m.discount)
    n, S, A, Z = m.num_envs, m.num_states, m.num_actions, m.num_observations
    N = n + 2 * n * S
    top = Z

    def idx(s, i, j):
        return n + 2 * (i * S + s) + (j - 1)

    T = np.zeros((A, N, N))
    O = np.zeros((A, N, Z + 1))
    R = np.zeros((N, A))
    bot = _fresh("_bot", (st.split("@")[0] for st in m.states))
    labels = [f"{bot}@e{i}" for i in range(n)]
    state_map: list[tuple] = [(None, ("bottom", i)) for i in range(n)]
    for i in range(n):
        for s in range(S):
            for j in (1, 2):
                labels.append(f"{m.states[s]}@e{i}#{j}")
                state_map.append((s, ("env", i, j)))
    for i in range(n):
        T[:, i, idx(0, i, 1) : idx(S - 1, i, 1) + 1 : 2] = m.initial_belief[i]
        O[:, i, top] = 1.0
        for s in range(S):
            for j in (1, 2):
                src = idx(s, i, j)
                T[:, src, n + 2 * i * S + 1 : n + 2 * (i + 1) * S : 2] = m.transition[i][:, s, :]
                R[src] = m.reward[i][s] * scale
            O[:, idx(s, i, 1), top] = 1.0
            O[:, idx(s, i, 2), :Z] = m.observation[i][:, s, :]
    base = None
    if m.available_actions is not None:
        base = _lifted_available(
            m.available_actions, [(k, sm[0]) for k, sm in enumerate(state_map) if sm[0] is not None], N, A
        )
    avail = _diamond_mask(N, A, range(n), diamond, base)
    ab = AbPomdp(
        states=labels,
        actions=m.actions,
        observations=m.observations + (_fresh(TOP, m.observations),),
        transition=T,
        observation=O,
        reward=R,
        belief_support=tuple(range(n)),
        discount=m.discount,
        horizon=_shift(m.horizon),
        available_actions=avail,
    )
    rec = TransformRecord(
        TransformKind.ME_TO_AB,
        tuple(state_map),
        SentinelInfo(tuple(range(n)), top, diamond, scale, 1),
    )
    return ab, rec


# --------------------------------------------------------------------------
# AB-POMDP -> POSG / PO-MEMDP


def _staged_single(m: AbPomdp):
    """Shared pieces of the single-bottom staging: ⊥ = 0, (s, j) = 1 + 2s + (j-1)."""
    S, A, Z = m.num_states, m.num_actions, m.num_observations
    N = 1 + 2 * S
    top = Z
    scale = _check_discount(m.discount)
    labels = [_fresh("_bot", m.states)] + [f"{m.states[s]}#{j}" for s in range(S) for j in (1, 2)]
    state_map = [(None, ("bottom",))] + [(s, ("stage", j)) for s in range(S) for j in (1, 2)]
    T_body = np.zeros((A, N, N))  # transitions out of staged states
    O = np.zeros((A, N, Z + 1))
    R = np.zeros((N, A))
    O[:, 0, top] = 1.0
    for s in range(S):
        for j in (1, 2):
            src = 1 + 2 * s + (j - 1)
            T_body[:, src, 2::2] = m.transition[:, s, :]
            R[src] = m.reward[s] * scale
        O[:, 1 + 2 * s, top] = 1.0
        O[:, 2 + 2 * s, :Z] = m.observation[:, s, :]
    base = None
    if m.available_actions is not None:
        base = _lifted_available(m.available_actions, [(k, sm[0]) for k, sm in enumerate(state_map) if sm[0] is not None], N, A)
    return N, top, scale, labels, state_map, T_body, O, R, base


def ab_to_posg(m: AbPomdp, diamond: int = 0) -> tuple[Posg, TransformRecord]:
    """One-sided game where nature picks the initial state q in Q at the bottom state."""
    N, top, scale, labels, state_map, T_body, O, R, base = _staged_single(m)
    A = m.num_actions
    Q = m.belief_support
    nq = len(Q)
    T = np.repeat(T_body[:, None], nq, axis=1)  # (A1, A2, N, N)
    for k, q in enumerate(Q):
        T[:, k, 0, :] = 0.0
        T[:, k, 0, 1 + 2 * q] = 1.0
    Ohat = np.repeat(O[:, None], nq, axis=1)
    Rhat = np.repeat(R[:, :, None], nq, axis=2)
    init = np.zeros(N)
    init[0] = 1.0
    posg = Posg(
        states=labels,
        agent_actions=m.actions,
        nature_actions=[m.states[q] for q in Q],
        observations=m.observations + (_fresh(TOP, m.observations),),
        transition=T,
        observation=Ohat,
        reward=Rhat,
        initial_belief=init,
        discount=m.discount,
        horizon=_shift(m.horizon),
        agent_available_actions=_diamond_mask(N, A, [0], diamond, base),
    )
    rec = TransformRecord(TransformKind.AB_TO_POSG, tuple(state_map), SentinelInfo((0,), top, diamond, scale, 1))
    return posg, rec


def ab_to_pomemdp(m: AbPomdp, diamond: int = 0) -> tuple[MePomdp, TransformRecord]:
    """One environment per q in Q; environment q moves ⊥ to (q, 1)."""
    N, top, scale, labels, state_map, T_body, O, R, base = _staged_single(m)
    A = m.num_actions
    Q = m.belief_support
    T = np.repeat(T_body[None], len(Q), axis=0)
    for k, q in enumerate(Q):
        T[k, :, 0, 1 + 2 * q] = 1.0
    init = np.zeros((len(Q), N))
    init[:, 0] = 1.0
    me = MePomdp(
        states=labels,
        actions=m.actions,
        observations=m.observations + (_fresh(TOP, m.observations),),
        transition=T,
        observation=np.repeat(O[None], len(Q), axis=0),
        reward=np.repeat(R[None], len(Q), axis=0),
        initial_belief=init,
        discount=m.discount,
        horizon=_shift(m.horizon),
        available_actions=_diamond_mask(N, A, [0], diamond, base),
    )
    rec = TransformRecord(TransformKind.AB_TO_POMEMDP, tuple(state_map), SentinelInfo((0,), top, diamond, scale, 1))
    return me, rec


# --------------------------------------------------------------------------
# PO-MEMDP -> MO-POMDP


def pomemdp_to_mo(m: MePomdp, cap: int = 1_000_000) -> tuple[MePomdp, TransformRecord]:
    """Product construction over the reachable part of S^n."""
    if not m.is_pomemdp:
        raise NotPoMemdp("observation tables differ across environments")
    n, A, Z = m.num_envs, m.num_actions, m.num_observations
    supp_init = [np.flatnonzero(m.initial_belief[i] > 0) for i in range(n)]
    succ = [[[np.flatnonzero(m.transition[i, a, s] > 0) for s in range(m.num_states)] for a in range(A)] for i in range(n)]
    index: dict[tuple, int] = {}
    order: list[tuple] = []

    def add(t):
        if t not in index:
            if len(order) >= cap:
                raise StateSpaceOverflow(f"product state space exceeds {cap} states")
            index[t] = len(order)
            order.append(t)

    for t in itertools.product(*supp_init):
        add(tuple(int(x) for x in t))
    k = 0
    while k < len(order):
        t = order[k]
        for a in range(A):
            for nxt in itertools.product(*(succ[i][a][t[i]] for i in range(n))):
                add(tuple(int(x) for x in nxt))
        k += 1

    N = len(order)
    P = np.array(order, dtype=int)  # (N, n)
    T = np.ones((A, N, N))
    for i in range(n):
        T *= m.transition[i][:, P[:, i]][:, :, P[:, i]]
    O = np.stack([m.observation[0][:, P[:, i], :] for i in range(n)])  # (n, A, N, Z)
    R = np.stack([m.reward[i][P[:, i]] for i in range(n)])
    b0 = np.ones(N)
    for i in range(n):
        b0 *= m.initial_belief[i][P[:, i]]
    avail = None
    if m.available_actions is not None:
        avail = np.ones((N, A), dtype=bool)
        for i in range(n):
            avail &= m.available_actions[P[:, i]]
    labels = ["(" + ",".join(m.states[s] for s in t) + ")" for t in order]
    mo = MePomdp(
        states=labels,
        actions=m.actions,
        observations=m.observations,
        transition=np.repeat(T[None], n, axis=0),
        observation=O,
        reward=R,
        initial_belief=np.repeat(b0[None], n, axis=0),
        discount=m.discount,
        horizon=m.horizon,
        available_actions=avail,
    )
    rec = TransformRecord(TransformKind.POMEMDP_TO_MO, tuple((t, ("product",)) for t in order), None)
    return mo, rec


# --------------------------------------------------------------------------
# policies


def lift_policy(record: TransformRecord, policy):
    """Strip the (◊, TOP) prefix a sentinel reduction adds to every history.

    Accepts a PolicyGraph or MixedPolicy. Product-construction records have
    identical policy sets on both sides, so the policy is returned unchanged.
    """
    from .policy import MixedPolicy, PolicyGraph

    if record.sentinel is None:
        return policy
    top = record.sentinel.top_observation
    if isinstance(policy, MixedPolicy):
        return MixedPolicy(tuple((lift_policy(record, g), w) for g, w in policy.components))
    if not isinstance(policy, PolicyGraph):
        raise TypeError(f"cannot lift {type(policy).__name__}")
    root = policy.nodes[policy.root]
    start = root.next[top]
    trimmed = tuple(replace(node, next=node.next[:top] + node.next[top + 1 :]) for node in policy.nodes)
    return PolicyGraph(trimmed, start).compact()


# --------------------------------------------------------------------------
# game slices, used to cross-check a POSG against its source model


def posg_against(game: Posg, nature_action: int) -> Pomdp:
    """The POMDP the agent faces when nature commits to one action throughout."""
    return Pomdp(
        states=game.states,
        actions=game.agent_actions,
        observations=game.observations,
        transition=game.transition[:, nature_action],
        observation=game.observation[:, nature_action],
        reward=game.reward[:, :, nature_action],
        initial_belief=game.initial_belief,
        discount=game.discount,
        horizon=game.horizon,
        available_actions=game.agent_available_actions,
    )
