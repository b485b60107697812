"""Tabular model types and belief arithmetic.

All tables are dense numpy arrays indexed by position in the label tuples:

* ``transition[a, s, s2]``  -- probability of moving from ``s`` to ``s2`` under ``a``
* ``observation[a, s2, z]`` -- probability of seeing ``z`` after ``a`` led to ``s2``
  (observations are keyed by the *successor* state)
* ``reward[s, a]``

Multi-environment models carry a leading environment axis on every table.
Arrays are frozen (read-only) on construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

INF = math.inf
PROB_TOL = 1e-9
ZERO_PROB = 1e-12


class ModelError(ValueError):
    pass


class ZeroProbabilityObservation(ModelError):
    pass


class IndexOutOfRange(IndexError):
    pass


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _labels(xs) -> tuple[str, ...]:
    return tuple(str(x) for x in xs)


@dataclass(frozen=True)
class Belief:
    """Probability vector over states."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1:
            raise ValueError("belief must be a vector")
        if np.any(p < -PROB_TOL) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"not a distribution: {p}")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, n: int, s: int) -> "Belief":
        p = np.zeros(n)
        p[s] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int) -> "Belief":
        return cls(np.full(n, 1.0 / n))

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.probs > 0))

    def __len__(self):
        return len(self.probs)

    def __eq__(self, other):
        return isinstance(other, Belief) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


BeliefLike = Union[Belief, np.ndarray, Sequence[float]]


def as_probs(b: BeliefLike) -> np.ndarray:
    if isinstance(b, Belief):
        return b.probs
    return np.asarray(b, dtype=float)


class _TabularMixin:
    """Shared accessors for single-table models (Pomdp, AbPomdp)."""

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return len(self.observations)

    @cached_property
    def joint(self) -> np.ndarray:
        """``joint[a, z, s, s2] = T(s,a)(s2) * O(s2,a)(z)``."""
        T = self.transition
        O = self.observation
        out = T[:, None, :, :] * np.transpose(O, (0, 2, 1))[:, :, None, :]
        out.setflags(write=False)
        return out

    @cached_property
    def action_mask(self) -> np.ndarray:
        if self.available_actions is None:
            m = np.ones((self.num_states, self.num_actions), dtype=bool)
        else:
            m = np.array(self.available_actions, dtype=bool)
        m.setflags(write=False)
        return m

    @cached_property
    def restricted(self) -> bool:
        return self.available_actions is not None and not bool(self.action_mask.all())

    def allowed_actions(self, support) -> np.ndarray:
        """Actions available in every state of ``support`` (bool mask)."""
        support = list(support)
        if not self.restricted or not support:
            return np.ones(self.num_actions, dtype=bool)
        return self.action_mask[support].all(axis=0)

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def action_index(self, name: str) -> int:
        return self.actions.index(name)

    def observation_index(self, name: str) -> int:
        return self.observations.index(name)


@dataclass(frozen=True, eq=False, kw_only=True)
class Pomdp(_TabularMixin):
    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    initial_belief: np.ndarray
    discount: float
    horizon: float = INF
    available_actions: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("states", "actions", "observations"):
            object.__setattr__(self, name, _labels(getattr(self, name)))
        for name in ("transition", "observation", "reward", "initial_belief"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.available_actions is not None:
            object.__setattr__(self, "available_actions", _frozen(self.available_actions, bool))
        object.__setattr__(self, "discount", float(self.discount))


@dataclass(frozen=True, eq=False, kw_only=True)
class AbPomdp(_TabularMixin):
    """POMDP whose initial belief is chosen adversarially from the simplex over ``belief_support``."""

    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    belief_support: tuple[int, ...]
    discount: float
    horizon: float = INF
    available_actions: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("states", "actions", "observations"):
            object.__setattr__(self, name, _labels(getattr(self, name)))
        for name in ("transition", "observation", "reward"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.available_actions is not None:
            object.__setattr__(self, "available_actions", _frozen(self.available_actions, bool))
        object.__setattr__(self, "belief_support", tuple(int(q) for q in self.belief_support))
        object.__setattr__(self, "discount", float(self.discount))

    def at(self, belief: BeliefLike) -> Pomdp:
        """The POMDP obtained by fixing the initial belief."""
        return Pomdp(
            states=self.states,
            actions=self.actions,
            observations=self.observations,
            transition=self.transition,
            observation=self.observation,
            reward=self.reward,
            initial_belief=as_probs(belief),
            discount=self.discount,
            horizon=self.horizon,
            available_actions=self.available_actions,
        )


@dataclass(frozen=True, eq=False, kw_only=True)
class MePomdp:
    """Finite set of POMDPs over shared index spaces; tables carry a leading env axis."""

    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray  # (n, A, S, S)
    observation: np.ndarray  # (n, A, S, Z)
    reward: np.ndarray  # (n, S, A)
    initial_belief: np.ndarray  # (n, S)
    discount: float
    horizon: float = INF
    available_actions: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("states", "actions", "observations"):
            object.__setattr__(self, name, _labels(getattr(self, name)))
        for name in ("transition", "observation", "reward", "initial_belief"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.available_actions is not None:
            object.__setattr__(self, "available_actions", _frozen(self.available_actions, bool))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_envs(self) -> int:
        return self.transition.shape[0]

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return len(self.observations)

    @property
    def is_pomemdp(self) -> bool:
        """All environments share the observation function."""
        return all(np.array_equal(self.observation[0], o) for o in self.observation[1:])

    @property
    def is_mopomdp(self) -> bool:
        """All environments share transitions and initial belief."""
        return all(
            np.array_equal(self.transition[0], t) and np.array_equal(self.initial_belief[0], b)
            for t, b in zip(self.transition[1:], self.initial_belief[1:])
        )


@dataclass(frozen=True, eq=False, kw_only=True)
class Posg:
    """One-sided partially observable stochastic game; nature observes the state."""

    states: tuple[str, ...]
    agent_actions: tuple[str, ...]
    nature_actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray  # (A1, A2, S, S)
    observation: np.ndarray  # (A1, A2, S, Z), keyed by successor
    reward: np.ndarray  # (S, A1, A2)
    initial_belief: np.ndarray
    discount: float
    horizon: float = INF
    agent_available_actions: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("states", "agent_actions", "nature_actions", "observations"):
            object.__setattr__(self, name, _labels(getattr(self, name)))
        for name in ("transition", "observation", "reward", "initial_belief"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.agent_available_actions is not None:
            object.__setattr__(
                self, "agent_available_actions", _frozen(self.agent_available_actions, bool)
            )
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return len(self.states)


AnyModel = Union[Pomdp, AbPomdp, MePomdp, Posg]


# --------------------------------------------------------------------------
# validation


def _check_rows(rows: np.ndarray, what: str, name_of, out: list[str]) -> None:
    """Append a violation for every row (last axis) that is not a distribution."""
    if not np.all(np.isfinite(rows)):
        out.append(f"{what}: non-finite entries")
        return
    sums = rows.sum(axis=-1)
    neg = (rows < 0).any(axis=-1)
    bad = np.atleast_1d((np.abs(sums - 1.0) > PROB_TOL) | neg)
    sums, neg = np.atleast_1d(sums), np.atleast_1d(neg)
    for idx in zip(*np.nonzero(bad)):
        out.append(f"{what} row {name_of(idx)} sums to {sums[idx]!r}" + (" (negative entry)" if neg[idx] else ""))


def _check_discount(discount: float, horizon, out: list[str]) -> None:
    if not 0.0 <= discount <= 1.0:
        out.append(f"discount/horizon: discount {discount} outside [0,1]")
    if horizon == INF:
        if discount >= 1.0:
            out.append("discount/horizon: discount must be < 1 when horizon is infinite")
    elif not (float(horizon).is_integer() and horizon >= 1):
        out.append(f"discount/horizon: horizon {horizon!r} is not a positive integer")


def _check_available(mask, num_states, num_actions, states, out):
    if mask is None:
        return
    if mask.shape != (num_states, num_actions):
        out.append(f"available_actions: shape {mask.shape} != {(num_states, num_actions)}")
        return
    for s in np.flatnonzero(~mask.any(axis=1)):
        out.append(f"available_actions: state {states[s]} has no available action")


def _validate_single(m, out: list[str], prefix: str = "") -> None:
    S, A, Z = m.num_states, m.num_actions, m.num_observations
    st, ac = m.states, m.actions
    if m.transition.shape != (A, S, S):
        out.append(f"{prefix}transition: shape {m.transition.shape} != {(A, S, S)}")
    else:
        _check_rows(m.transition, f"{prefix}transition", lambda i: f"({st[i[1]]},{ac[i[0]]})", out)
    if m.observation.shape != (A, S, Z):
        out.append(f"{prefix}observation: shape {m.observation.shape} != {(A, S, Z)}")
    else:
        _check_rows(m.observation, f"{prefix}observation", lambda i: f"({st[i[1]]},{ac[i[0]]})", out)
    if m.reward.shape != (S, A):
        out.append(f"{prefix}reward: shape {m.reward.shape} != {(S, A)}")
    elif not np.all(np.isfinite(m.reward)):
        out.append(f"{prefix}reward: non-finite entries")


def validate(model: AnyModel) -> list[str]:
    """Return a list of invariant violations; empty means the model is well formed."""
    out: list[str] = []
    if isinstance(model, (Pomdp, AbPomdp)):
        _validate_single(model, out)
        if isinstance(model, Pomdp):
            if model.initial_belief.shape != (model.num_states,):
                out.append("initial_belief: wrong length")
            else:
                _check_rows(model.initial_belief, "initial_belief", lambda i: "", out)
        else:
            q = model.belief_support
            if not q:
                out.append("belief_support: empty")
            if any(not 0 <= s < model.num_states for s in q):
                out.append("belief_support: index out of range")
            if len(set(q)) != len(q):
                out.append("belief_support: duplicate states")
        _check_discount(model.discount, model.horizon, out)
        _check_available(model.available_actions, model.num_states, model.num_actions, model.states, out)
    elif isinstance(model, MePomdp):
        n = model.num_envs
        if n < 1:
            out.append("num_envs: must be positive")
        for name, shape in (
            ("observation", (n, model.num_actions, model.num_states, model.num_observations)),
            ("reward", (n, model.num_states, model.num_actions)),
            ("initial_belief", (n, model.num_states)),
        ):
            if getattr(model, name).shape != shape:
                out.append(f"{name}: shape {getattr(model, name).shape} != {shape}")
        if out:
            return out
        for i in range(n):
            sub = env_slice(model, i)
            env_out: list[str] = []
            _validate_single(sub, env_out, prefix=f"env {i}: ")
            if sub.initial_belief.shape == (sub.num_states,):
                _check_rows(sub.initial_belief, f"env {i}: initial_belief", lambda _: "", env_out)
            out.extend(env_out)
        _check_discount(model.discount, model.horizon, out)
        _check_available(model.available_actions, model.num_states, model.num_actions, model.states, out)
    elif isinstance(model, Posg):
        S = model.num_states
        A1, A2 = len(model.agent_actions), len(model.nature_actions)
        Z = len(model.observations)
        st = model.states

        def nm(i):
            return f"({st[i[2]]},{model.agent_actions[i[0]]},{model.nature_actions[i[1]]})"

        if model.transition.shape != (A1, A2, S, S):
            out.append(f"transition: shape {model.transition.shape} != {(A1, A2, S, S)}")
        else:
            _check_rows(model.transition, "transition", nm, out)
        if model.observation.shape != (A1, A2, S, Z):
            out.append(f"observation: shape {model.observation.shape} != {(A1, A2, S, Z)}")
        else:
            _check_rows(model.observation, "observation", nm, out)
        if model.reward.shape != (S, A1, A2):
            out.append(f"reward: shape {model.reward.shape} != {(S, A1, A2)}")
        _check_rows(model.initial_belief, "initial_belief", lambda i: "", out)
        _check_discount(model.discount, model.horizon, out)
        _check_available(model.agent_available_actions, S, A1, st, out)
    else:
        out.append(f"unknown model type {type(model).__name__}")
    return out


# --------------------------------------------------------------------------
# belief arithmetic


def pr_obs(m, b: BeliefLike, a: int, z: int) -> float:
    """P(z | b, a) = sum over s, s2 of b(s) T(s,a)(s2) O(s2,a)(z)."""
    p = as_probs(b)
    return float(p @ m.transition[a] @ m.observation[a][:, z])


def belief_update(m, b: BeliefLike, a: int, z: int) -> Belief:
    p = as_probs(b)
    unnorm = (p @ m.transition[a]) * m.observation[a][:, z]
    total = unnorm.sum()
    if total <= ZERO_PROB:
        raise ZeroProbabilityObservation(
            f"observation {m.observations[z]} has probability {total:.3g} after action {m.actions[a]}"
        )
    return Belief(unnorm / total)


def env_slice(me: MePomdp, i: int) -> Pomdp:
    """The ``i``-th environment (0-based) as a standalone POMDP."""
    if not 0 <= i < me.num_envs:
        raise IndexOutOfRange(f"environment {i} not in [0, {me.num_envs})")
    return Pomdp(
        states=me.states,
        actions=me.actions,
        observations=me.observations,
        transition=me.transition[i],
        observation=me.observation[i],
        reward=me.reward[i],
        initial_belief=me.initial_belief[i],
        discount=me.discount,
        horizon=me.horizon,
        available_actions=me.available_actions,
    )


def single_env(m: Pomdp) -> MePomdp:
    """Wrap a POMDP as a one-environment ME-POMDP."""
    return MePomdp(
        states=m.states,
        actions=m.actions,
        observations=m.observations,
        transition=m.transition[None],
        observation=m.observation[None],
        reward=m.reward[None],
        initial_belief=m.initial_belief[None],
        discount=m.discount,
        horizon=m.horizon,
        available_actions=m.available_actions,
    )


def reward_bounds(m) -> tuple[float, float]:
    return float(np.min(m.reward)), float(np.max(m.reward))
