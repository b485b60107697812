"""Instance generators: the endangered-bird fixture and family, and multi-environment RockSample."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .model import AbPomdp, MePomdp

GRANULE = 20  # probabilities are multiples of 1/20
MAX_DRAWS = 1000


class GenerationFailure(RuntimeError):
    pass


class Variant(str, Enum):
    ME_POMDP = "me"
    PO_MEMDP = "pomemdp"
    MO_POMDP = "mopomdp"


# --------------------------------------------------------------------------
# Bird problem

_DN_ROWS = {
    "low": (0.8, 0.15, 0.05),
    "mid": (0.1, 0.8, 0.1),
    "high": (0.05, 0.15, 0.8),
}

_BIRD_REWARD = np.array([[-5.0, 0.0], [0.0, 5.0], [5.0, 10.0]])


def _bird_model(T, O, R, n, states, actions, metadata, discount=0.95):
    S = len(states)
    b0 = np.zeros((n, S))
    b0[:, 0] = 1.0
    return MePomdp(
        states=states,
        actions=actions,
        observations=("o_L", "o_H"),
        transition=T,
        observation=O,
        reward=np.broadcast_to(R, (n,) + R.shape).copy(),
        initial_belief=b0,
        discount=discount,
        metadata=metadata,
    )


def bird_fixture() -> MePomdp:
    """Three population levels, control-cats vs do-nothing, three experts."""
    c_rows = {
        # per expert: rows for s_L, s_M, s_H under C
        0: [(0.6, 0.35, 0.05), (0.1, 0.5, 0.4), (0.0, 0.1, 0.9)],
        1: [(0.2, 0.6, 0.2), (0.1, 0.75, 0.15), (0.05, 0.15, 0.8)],
    }
    c_rows[2] = c_rows[0]
    z_low = (0.5, 0.5, 0.4)
    dn = np.array([_DN_ROWS["low"], _DN_ROWS["mid"], _DN_ROWS["high"]])
    T = np.zeros((3, 2, 3, 3))
    O = np.zeros((3, 2, 3, 2))
    for i in range(3):
        T[i, 0] = c_rows[i]
        T[i, 1] = dn
        for a in range(2):
            O[i, a] = [(1.0, 0.0), (z_low[i], 1.0 - z_low[i]), (0.0, 1.0)]
    return _bird_model(
        T, O, _BIRD_REWARD, 3, ("s_L", "s_M", "s_H"), ("C", "DN"), {"generator": "bird", "fixture": True}
    )


@dataclass(frozen=True)
class BirdParams:
    num_states: int = 3
    num_actions: int = 2
    num_experts: int = 2
    seed: int = 0
    variant: Variant = Variant.ME_POMDP
    discount: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.num_states < 2:
            raise ValueError("num_states must be at least 2")
        if self.num_actions < 2:
            raise ValueError("num_actions must be at least 2 (DN plus one intervention)")
        if self.num_experts < 1:
            raise ValueError("num_experts must be at least 1")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")


def _slots(s: int, S: int) -> list[int]:
    """Successor states of ``s`` in increasing population order."""
    if S <= 3:
        return list(range(S))
    if s == 0:
        return [0, 1, 2]
    if s == S - 1:
        return [S - 3, S - 2, S - 1]
    return [s - 1, s, s + 1]


def _dn_row(s: int, S: int) -> np.ndarray:
    row = np.zeros(S)
    if S == 2:
        row[s] = 0.8
        row[1 - s] = 0.2
        return row
    kind = "low" if s == 0 else "high" if s == S - 1 else "mid"
    row[_slots(s, S)] = _DN_ROWS[kind]
    return row


def _compositions(k: int, total: int = GRANULE) -> list[tuple[int, ...]]:
    """All ways to write ``total`` as an ordered sum of ``k`` non-negative parts."""
    out = []
    for bars in itertools.combinations(range(total + k - 1), k - 1):
        edges = (-1,) + bars + (total + k - 1,)
        out.append(tuple(edges[i + 1] - edges[i] - 1 for i in range(k)))
    return out


def _bird_draw(p: BirdParams, rng: np.random.Generator):
    S, n = p.num_states, p.num_experts
    k = p.num_actions - 1
    width = min(S, 3)
    comps = _compositions(width)
    if k > len(comps):
        raise GenerationFailure("more actions than distinct 0.05-granular distributions")
    picks = rng.choice(len(comps), size=k, replace=False)
    # least effective (most mass on the lowest successor) first
    dists = sorted((comps[i] for i in picks), reverse=True)
    dists = np.asarray(dists, dtype=float) / GRANULE

    n_order = 1 if p.variant is Variant.MO_POMDP else n
    n_obs = 1 if p.variant is Variant.PO_MEMDP else n
    # orders[i, s, r] = action with effectiveness rank r in state s for expert i
    orders = np.array([[rng.permutation(k) for _ in range(S)] for _ in range(n_order)])
    if S - 2 > 19:
        raise GenerationFailure("too many middle states for distinct 0.05-granular observations")
    obs = []
    for _ in range(n_obs):
        lows = rng.choice(np.arange(1, GRANULE), size=S - 2, replace=False)
        obs.append(np.sort(lows)[::-1] / GRANULE)
    obs = np.array(obs).reshape(n_obs, S - 2)
    return dists, orders, obs


def _distinct_profiles(orders, obs, n, variant) -> bool:
    if n == 1:
        return True
    profiles = []
    for i in range(n):
        key = []
        if variant is not Variant.MO_POMDP:
            key.append(orders[i].tobytes())
        if variant is not Variant.PO_MEMDP:
            key.append(obs[i].tobytes())
        profiles.append(tuple(key))
    return len(set(profiles)) == n


def gen_bird(p: BirdParams) -> MePomdp:
    """Random bird-problem instance; a pure function of ``p``."""
    rng = np.random.default_rng(p.seed)
    for _ in range(MAX_DRAWS):
        dists, orders, obs = _bird_draw(p, rng)
        if _distinct_profiles(orders, obs, p.num_experts, p.variant):
            break
    else:
        raise GenerationFailure(f"no pairwise-distinct experts after {MAX_DRAWS} draws")
    S, A, n = p.num_states, p.num_actions, p.num_experts
    k = A - 1
    T = np.zeros((n, A, S, S))
    O = np.zeros((n, A, S, 2))
    for i in range(n):
        order = orders[min(i, len(orders) - 1)]
        low = obs[min(i, len(obs) - 1)]
        for s in range(S):
            T[i, k, s] = _dn_row(s, S)
            for rank, a in enumerate(order[s]):
                T[i, a, s, _slots(s, S)] = dists[rank]
        col = np.concatenate(([1.0], low, [0.0]))
        O[i, :, :, 0] = col
        O[i, :, :, 1] = 1.0 - col
    R = np.repeat(5.0 * np.arange(S)[:, None], A, axis=1)
    R[:, :k] -= 5.0
    actions = ("C", "DN") if A == 2 else tuple(f"C{j + 1}" for j in range(k)) + ("DN",)
    if S == 2:
        states = ("s_L", "s_H")
    else:
        states = ("s_L",) + tuple(f"s_{j}" for j in range(1, S - 1)) + ("s_H",)
    meta = {"generator": "bird", "params": _params_dict(p)}
    return _bird_model(T, O, R, n, states, actions, meta, p.discount)


def prop1_fixture() -> MePomdp:
    """One state, two actions, two environments with opposite rewards.

    Any deterministic policy scores -1 in one environment, while the
    uniform mixture scores 0 in both.
    """
    R = np.array([[[1.0, -1.0]], [[-1.0, 1.0]]])
    return MePomdp(
        states=("s",),
        actions=("a1", "a2"),
        observations=("z",),
        transition=np.ones((2, 2, 1, 1)),
        observation=np.ones((2, 2, 1, 1)),
        reward=R,
        initial_belief=np.ones((2, 1)),
        discount=1.0,
        horizon=1,
        metadata={"generator": "prop1"},
    )


# --------------------------------------------------------------------------
# RockSample


class Placement(str, Enum):
    RANDOM = "random"
    NEARBY = "nearby"
    FAR = "far"


class Formulation(str, Enum):
    AB = "ab"
    ME = "me"


MOVES = {"north": (0, 1), "south": (0, -1), "east": (1, 0), "west": (-1, 0)}


@dataclass(frozen=True)
class RockSampleParams:
    m: int = 2
    g: int = 1
    t: int = 2
    placement: Placement = Placement.NEARBY
    seed: int = 0
    formulation: Formulation = Formulation.ME
    discount: float = 0.95
    exit_reward: float = 10.0
    rock_reward: float = 10.0
    # distance at which a check is right with probability 3/4; default m/2
    sensor_half_distance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "placement", Placement(self.placement))
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        if self.m < 1:
            raise ValueError("m must be positive")
        if not 1 <= self.g <= self.t:
            raise ValueError("need 1 <= g <= t")
        if self.t > self.m * self.m - 1:
            raise ValueError("t must leave the start cell free (t <= m*m - 1)")
        if self.placement is not Placement.RANDOM:
            if self.t not in (2, 3):
                raise ValueError("nearby/far placements need t in {2, 3}")
            if self.m < 2:
                raise ValueError("nearby/far placements need m >= 2")
        if not 0 < self.discount < 1:
            raise ValueError("discount must be in (0, 1)")

    @property
    def d0(self) -> float:
        return self.sensor_half_distance if self.sensor_half_distance is not None else self.m / 2


def rock_positions(p: RockSampleParams) -> list[tuple[int, int]]:
    m = p.m
    if p.placement is Placement.NEARBY:
        return [(1, 0), (0, 1), (1, 1)][: p.t]
    if p.placement is Placement.FAR:
        return [(m - 1, 0), (0, m - 1), (m - 1, m - 1)][: p.t]
    cells = [(x, y) for y in range(m) for x in range(m) if (x, y) != (0, 0)]
    rng = np.random.default_rng(p.seed)
    return [cells[i] for i in rng.choice(len(cells), size=p.t, replace=False)]


def check_accuracy(pos, rock, d0: float) -> float:
    d = math.dist(pos, rock)
    return 0.5 * (1.0 + 2.0 ** (-d / d0))


def _rocksample_tables(p: RockSampleParams, rocks, good_sets, flags_of_state):
    """Shared builder.

    ``flags_of_state`` lists the non-terminal rock-status tuples; for each
    environment ``good_sets[e]`` maps a status tuple to the set of good rocks
    and to the successor tuple after sampling a given rock.
    """
    m = p.m
    positions = [(x, y) for y in range(m) for x in range(m)]
    nonterm = [(pos, f) for pos in positions for f in flags_of_state]
    index = {key: k for k, key in enumerate(nonterm)}
    exit_s = len(nonterm)
    S = exit_s + 1
    actions = tuple(MOVES) + ("sample",) + tuple(f"check{r}" for r in range(p.t))
    A = len(actions)
    NONE, GOOD, BAD = 0, 1, 2
    n = len(good_sets)
    T = np.zeros((n, A, S, S))
    O = np.zeros((n, A, S, 3))
    R = np.zeros((n, S, A))
    for e, env in enumerate(good_sets):
        T[e, :, exit_s, exit_s] = 1.0
        O[e, :, :, NONE] = 1.0
        for (pos, f), s in index.items():
            good = env.good(f)
            for a, (dx, dy) in enumerate(MOVES.values()):
                x, y = pos[0] + dx, pos[1] + dy
                if x >= m:
                    T[e, a, s, exit_s] = 1.0
                    R[e, s, a] = p.exit_reward
                elif 0 <= x and 0 <= y < m:
                    T[e, a, s, index[((x, y), f)]] = 1.0
                else:
                    T[e, a, s, s] = 1.0
            a = len(MOVES)
            if pos in rocks:
                r = rocks.index(pos)
                if r in good:
                    R[e, s, a] = p.rock_reward
                    T[e, a, s, index[(pos, env.sampled(f, r))]] = 1.0
                else:
                    R[e, s, a] = -p.rock_reward
                    T[e, a, s, s] = 1.0
            else:
                T[e, a, s, s] = 1.0
            for r, rock in enumerate(rocks):
                a = len(MOVES) + 1 + r
                T[e, a, s, s] = 1.0
                acc = check_accuracy(pos, rock, p.d0)
                O[e, a, s] = 0.0
                O[e, a, s, GOOD if r in good else BAD] = acc
                O[e, a, s, BAD if r in good else GOOD] = 1.0 - acc
    return nonterm, index, S, actions, T, O, R


def _flag_str(f) -> str:
    return "".join("G" if b else "B" for b in f)


class _MeEnv:
    """Environment of the ME formulation: slot k holds rock ``combo[k]``."""

    def __init__(self, combo):
        self.combo = combo

    def good(self, flags):
        return {r for r, b in zip(self.combo, flags) if b}

    def sampled(self, flags, rock):
        k = self.combo.index(rock)
        return flags[:k] + (False,) + flags[k + 1 :]


class _AbEnv:
    @staticmethod
    def good(flags):
        return {r for r, b in enumerate(flags) if b}

    @staticmethod
    def sampled(flags, rock):
        return flags[:rock] + (False,) + flags[rock + 1 :]


def gen_rocksample(p: RockSampleParams) -> MePomdp | AbPomdp:
    rocks = rock_positions(p)
    combos = list(itertools.combinations(range(p.t), p.g))
    if p.formulation is Formulation.ME:
        flags = list(itertools.product((True, False), repeat=p.g))
        envs = [_MeEnv(c) for c in combos]
    else:
        flags = [f for f in itertools.product((True, False), repeat=p.t) if sum(f) <= p.g]
        envs = [_AbEnv()]
    nonterm, index, S, actions, T, O, R = _rocksample_tables(p, rocks, envs, flags)
    labels = tuple(f"{x},{y}|{_flag_str(f)}" for (x, y), f in nonterm) + ("exit",)
    meta = {"generator": "rocksample", "params": _params_dict(p), "rocks": [list(r) for r in rocks]}
    if p.formulation is Formulation.ME:
        b0 = np.zeros((len(envs), S))
        b0[:, index[((0, 0), (True,) * p.g)]] = 1.0
        meta["environments"] = [list(c) for c in combos]
        return MePomdp(
            states=labels,
            actions=actions,
            observations=("none", "good", "bad"),
            transition=T,
            observation=O,
            reward=R,
            initial_belief=b0,
            discount=p.discount,
            metadata=meta,
        )
    support = tuple(index[((0, 0), tuple(r in c for r in range(p.t)))] for c in combos)
    return AbPomdp(
        states=labels,
        actions=actions,
        observations=("none", "good", "bad"),
        transition=T[0],
        observation=O[0],
        reward=R[0],
        belief_support=tuple(sorted(support)),
        discount=p.discount,
    )


def rocksample_metadata(p: RockSampleParams) -> dict:
    return {"generator": "rocksample", "params": _params_dict(p), "rocks": [list(r) for r in rock_positions(p)]}


def _params_dict(p) -> dict:
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in asdict(p).items()}
