"""Finite-state controllers from α-vectors, mixtures of them, and their evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bounds import GammaStack, LowerBound
from .gamelp import AgentSolution
from .model import INF, MePomdp, env_slice


class MissingProvenance(LookupError):
    pass


class SingularSystem(ArithmeticError):
    pass


@dataclass(frozen=True)
class PolicyNode:
    action: int
    next: tuple[int, ...]


@dataclass(frozen=True)
class PolicyGraph:
    nodes: tuple[PolicyNode, ...]
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        n = len(self.nodes)
        if not 0 <= self.root < n:
            raise ValueError("root node out of range")
        for node in self.nodes:
            if any(not 0 <= k < n for k in node.next):
                raise ValueError("controller references a missing node")

    def __len__(self):
        return len(self.nodes)

    @property
    def actions(self) -> np.ndarray:
        return np.array([nd.action for nd in self.nodes], dtype=int)

    @property
    def next_table(self) -> np.ndarray:
        return np.array([nd.next for nd in self.nodes], dtype=int)

    def compact(self) -> "PolicyGraph":
        """Renumber nodes reachable from the root in breadth-first order."""
        order = [self.root]
        where = {self.root: 0}
        k = 0
        while k < len(order):
            for nxt in self.nodes[order[k]].next:
                if nxt not in where:
                    where[nxt] = len(order)
                    order.append(nxt)
            k += 1
        nodes = tuple(PolicyNode(self.nodes[i].action, tuple(where[j] for j in self.nodes[i].next)) for i in order)
        return PolicyGraph(nodes, 0)

    def run(self, observations) -> list[int]:
        """Actions played along an observation sequence (one more action than observations)."""
        node = self.root
        out = [self.nodes[node].action]
        for z in observations:
            node = self.nodes[node].next[z]
            out.append(self.nodes[node].action)
        return out

    def to_dict(self, actions=None, observations=None) -> dict:
        def a_name(a):
            return actions[a] if actions is not None else a

        def z_name(z):
            return observations[z] if observations is not None else str(z)

        return {
            "root": self.root,
            "nodes": [
                {"action": a_name(nd.action), "next": {z_name(z): k for z, k in enumerate(nd.next)}}
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, actions=None, observations=None) -> "PolicyGraph":
        nodes = []
        for nd in d["nodes"]:
            a = actions.index(nd["action"]) if actions is not None else int(nd["action"])
            nxt = nd["next"]
            if observations is not None:
                succ = tuple(int(nxt[z]) for z in observations)
            else:
                succ = tuple(int(nxt[str(z)]) for z in range(len(nxt)))
            nodes.append(PolicyNode(a, succ))
        return cls(tuple(nodes), int(d.get("root", 0)))


@dataclass(frozen=True)
class MixedPolicy:
    components: tuple[tuple[PolicyGraph, float], ...]

    def __post_init__(self):
        comps = tuple((g, float(w)) for g, w in self.components)
        if not comps:
            raise ValueError("empty mixture")
        w = np.array([c[1] for c in comps])
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must form a distribution, got {w}")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.components])

    @property
    def graphs(self) -> list[PolicyGraph]:
        return [g for g, _ in self.components]

    @classmethod
    def single(cls, g: PolicyGraph) -> "MixedPolicy":
        return cls(((g, 1.0),))

    def to_dict(self, actions=None, observations=None) -> dict:
        return {
            "weights": [w for _, w in self.components],
            "components": [g.to_dict(actions, observations) for g, _ in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict, actions=None, observations=None) -> "MixedPolicy":
        if "components" not in d:
            return cls.single(PolicyGraph.from_dict(d, actions, observations))
        gs = [PolicyGraph.from_dict(c, actions, observations) for c in d["components"]]
        return cls(tuple(zip(gs, d["weights"])))


# --------------------------------------------------------------------------
# extraction


def extract_policy(source, index: int, level: int | None = None) -> PolicyGraph:
    """Controller that replays the policy behind one α-vector.

    ``source`` is a LowerBound (index is a global vector index; pruned
    successors are replaced by a surviving dominator) or a GammaStack
    (index into ``level``, default the top level).
    """
    if isinstance(source, GammaStack):
        return _extract_from_stack(source, index, level)
    if not isinstance(source, LowerBound):
        raise TypeError("expected a LowerBound or GammaStack")
    lb = source
    Z = lb.model.num_observations
    where: dict[int, int] = {}
    order: list[int] = []

    def visit(i):
        if i not in where:
            where[i] = len(order)
            order.append(i)
        return where[i]

    visit(index)
    raw: list[tuple[int, list[int]]] = []
    k = 0
    while k < len(order):
        vec = lb.vectors[order[k]]
        if vec.successors is None:
            if not vec.blind:
                raise MissingProvenance(f"vector {order[k]} has no successor record")
            raw.append((vec.action, [k] * Z))
        else:
            raw.append((vec.action, [visit(lb.resolve(j)) for j in vec.successors]))
        k += 1
    return PolicyGraph(tuple(PolicyNode(a, tuple(n)) for a, n in raw), 0)


def _extract_from_stack(stack: GammaStack, index: int, level: int | None) -> PolicyGraph:
    level = stack.horizon if level is None else level
    Z = stack.num_observations
    where: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []

    def visit(key):
        if key not in where:
            where[key] = len(order)
            order.append(key)
        return where[key]

    visit((level, index))
    nodes = []
    k = 0
    while k < len(order):
        t, i = order[k]
        vec = stack.levels[t - 1][i]
        if vec.successors is None:
            # last decision: the continuation is never executed
            nodes.append(PolicyNode(vec.action, (k,) * Z))
        else:
            nodes.append(PolicyNode(vec.action, tuple(visit((t - 1, j)) for j in vec.successors)))
        k += 1
    return PolicyGraph(tuple(nodes), 0)


def agent_policy(source, sol: AgentSolution, indices=None, tol: float = 1e-12) -> MixedPolicy:
    """Mixture over the controllers of the α-vectors weighted by the agent LP.

    ``indices[k]`` maps the k-th LP column to the vector index in ``source``;
    by default the LP was solved over ``source``'s active vectors (LowerBound)
    or its top level (GammaStack).
    """
    if indices is None:
        indices = source.active if isinstance(source, LowerBound) else range(len(source.top))
    indices = list(indices)
    comps = []
    for k, w in enumerate(sol.weights):
        if w > tol:
            comps.append((extract_policy(source, indices[k]), float(w)))
    total = sum(w for _, w in comps)
    return MixedPolicy(tuple((g, w / total) for g, w in comps))


# --------------------------------------------------------------------------
# Kuhn conversion


class BehavioralRunner:
    """Per-history action distribution equivalent to a mixture of controllers.

    Tracks, for each of ``batch`` independent histories, which components are
    still consistent with every action taken so far; the next action is drawn
    in proportion to the weights of consistent components. When no component
    is consistent the fallback action is played.
    """

    def __init__(self, mp: MixedPolicy, batch: int = 1, fallback: int = 0):
        self.policy = mp
        self.batch = batch
        self.fallback = fallback
        self._w = mp.weights
        self._acts = [g.actions for g in mp.graphs]
        self._next = [g.next_table for g in mp.graphs]
        self._roots = np.array([g.root for g in mp.graphs])
        self.num_actions = 1 + max(int(a.max()) for a in self._acts)
        self.reset()

    @property
    def num_components(self) -> int:
        return len(self._w)

    def reset(self) -> None:
        K = self.num_components
        self.nodes = np.tile(self._roots, (self.batch, 1))
        self.alive = np.ones((self.batch, K), dtype=bool)

    def _component_actions(self) -> np.ndarray:
        return np.stack([self._acts[k][self.nodes[:, k]] for k in range(self.num_components)], axis=1)

    def action_distribution(self, num_actions: int | None = None) -> np.ndarray:
        """(batch, A) action probabilities at the current histories."""
        A = max(self.num_actions, self.fallback + 1, num_actions or 0)
        acts = self._component_actions()
        mass = np.where(self.alive, self._w[None, :], 0.0)
        dist = np.zeros((self.batch, A))
        rows = np.repeat(np.arange(self.batch), self.num_components)
        np.add.at(dist, (rows, acts.ravel()), mass.ravel())
        total = dist.sum(axis=1)
        dead = total <= 0
        dist[dead] = 0.0
        dist[dead, self.fallback] = 1.0
        dist[~dead] /= total[~dead, None]
        return dist

    def step(self, actions, observations) -> None:
        actions = np.broadcast_to(np.asarray(actions), (self.batch,))
        observations = np.broadcast_to(np.asarray(observations), (self.batch,))
        acts = self._component_actions()
        self.alive &= acts == actions[:, None]
        for k in range(self.num_components):
            self.nodes[:, k] = self._next[k][self.nodes[:, k], observations]


def mixed_to_behavioral(mp: MixedPolicy, batch: int = 1, fallback: int = 0) -> BehavioralRunner:
    return BehavioralRunner(mp, batch=batch, fallback=fallback)


# --------------------------------------------------------------------------
# exact evaluation


def evaluate_fsc_exact(m, g: PolicyGraph) -> np.ndarray:
    """Value of controller ``g`` started at its root from each state."""
    g = g.compact()
    S = m.num_states
    N = len(g)
    acts = g.actions
    nxt = g.next_table
    J = m.joint
    gamma = m.discount
    R = m.reward[:, acts].T  # (N, S)
    if m.horizon != INF:
        V = R.copy()
        for _ in range(int(m.horizon) - 1):
            new = R.copy()
            for n in range(N):
                a = acts[n]
                new[n] += gamma * sum(J[a, z] @ V[nxt[n, z]] for z in range(m.num_observations))
            V = new
        return V[0]
    if gamma >= 1.0:
        raise SingularSystem("infinite horizon needs discount < 1")
    rows, cols, vals = [], [], []
    for n in range(N):
        a = acts[n]
        for z in range(m.num_observations):
            blk = J[a, z]
            r, c = np.nonzero(blk)
            rows.append(n * S + r)
            cols.append(nxt[n, z] * S + c)
            vals.append(blk[r, c])
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * S, N * S)
    )
    system = (sp.identity(N * S, format="csc") - gamma * P).tocsc()
    V = spla.spsolve(system, R.ravel())
    if not np.all(np.isfinite(V)):
        raise SingularSystem("controller evaluation failed")
    return V.reshape(N, S)[0]


def evaluate_mixed(m, mp: MixedPolicy) -> np.ndarray:
    return sum(w * evaluate_fsc_exact(m, g) for g, w in mp.components)


def env_values(me: MePomdp, policy) -> np.ndarray:
    """Expected return of ``policy`` in each environment from its initial belief."""
    mp = policy if isinstance(policy, MixedPolicy) else MixedPolicy.single(policy)
    out = []
    for i in range(me.num_envs):
        pomdp = env_slice(me, i)
        out.append(float(pomdp.initial_belief @ evaluate_mixed(pomdp, mp)))
    return np.array(out)


# --------------------------------------------------------------------------
# simulation


def _sample(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] > cdf).sum(axis=1), cdf.shape[1] - 1)


def simulate(
    m,
    policy,
    episodes: int,
    horizon_cap: int,
    seed: int = 0,
    env: int | None = None,
    chunk: int = 10_000,
) -> tuple[float, float]:
    """Mean discounted return and its standard error.

    Episode ``e`` draws all its randomness from ``default_rng([seed, e])``, so
    results do not depend on chunking or order. ``policy`` may be a
    PolicyGraph, MixedPolicy (a component is drawn per episode) or
    BehavioralRunner (its mixture is replayed history by history).
    """
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    if horizon_cap is None or horizon_cap == INF or horizon_cap <= 0:
        raise ValueError("horizon_cap must be a positive integer")
    if isinstance(m, MePomdp):
        m = env_slice(m, 0 if env is None else env)
    steps = int(horizon_cap if m.horizon == INF else min(horizon_cap, m.horizon))
    returns = np.empty(episodes)
    for start in range(0, episodes, chunk):
        stop = min(episodes, start + chunk)
        returns[start:stop] = _simulate_chunk(m, policy, start, stop, steps, seed)
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return mean, se


def _simulate_chunk(m, policy, start, stop, steps, seed) -> np.ndarray:
    E = stop - start
    draws_per_step = 3
    U = np.empty((E, 2 + draws_per_step * steps))
    for k, e in enumerate(range(start, stop)):
        U[k] = np.random.default_rng([seed, e]).random(U.shape[1])
    T_cdf = np.cumsum(m.transition, axis=2)  # (A, S, S)
    O_cdf = np.cumsum(m.observation, axis=2)  # (A, S, Z)
    state = _sample(np.broadcast_to(np.cumsum(m.initial_belief), (E, m.num_states)), U[:, 0])

    runner = None
    if isinstance(policy, PolicyGraph):
        policy = MixedPolicy.single(policy)
    if isinstance(policy, BehavioralRunner):
        runner = BehavioralRunner(policy.policy, batch=E, fallback=policy.fallback)
    elif isinstance(policy, MixedPolicy):
        comp = _sample(np.broadcast_to(np.cumsum(policy.weights), (E, len(policy.weights))), U[:, 1])
        # flatten all controllers into one node table
        offsets = np.cumsum([0] + [len(g) for g in policy.graphs])
        acts = np.concatenate([g.actions for g in policy.graphs])
        nxts = np.concatenate([g.next_table + off for g, off in zip(policy.graphs, offsets)])
        node = offsets[comp] + np.array([g.root for g in policy.graphs])[comp]
    else:
        raise TypeError(f"unsupported policy type {type(policy).__name__}")

    total = np.zeros(E)
    disc = 1.0
    for t in range(steps):
        u_a, u_s, u_z = U[:, 2 + 3 * t], U[:, 3 + 3 * t], U[:, 4 + 3 * t]
        if runner is not None:
            dist = runner.action_distribution(m.num_actions)
            a = _sample(np.cumsum(dist, axis=1), u_a)
        else:
            a = acts[node]
        total += disc * m.reward[state, a]
        state = _sample(T_cdf[a, state], u_s)
        z = _sample(O_cdf[a, state], u_z)
        if runner is not None:
            runner.step(a, z)
        else:
            node = nxts[node, z]
        disc *= m.discount
    return total
