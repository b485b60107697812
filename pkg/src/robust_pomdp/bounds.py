"""α-vector value functions: exact finite-horizon sets, point backups, pruning and bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import as_probs

DOMINANCE_TOL = 1e-13


class BlowupGuard(RuntimeError):
    """An exact α-vector set grew past the configured cap."""


@dataclass(frozen=True, eq=False)
class AlphaVector:
    values: np.ndarray
    action: int
    # index of the successor vector per observation; None marks a vector with
    # no recorded continuation (blind vectors loop on themselves, horizon-1
    # vectors have nothing left to do)
    successors: tuple[int, ...] | None = None
    blind: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("α-vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __matmul__(self, b):
        return float(self.values @ as_probs(b))


# --------------------------------------------------------------------------
# pruning


def _prune_rows(
    V: np.ndarray,
    coords: Sequence[int] | None = None,
    actions: np.ndarray | None = None,
    can_replace: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[int, int]]:
    """Indices of rows that survive pointwise pruning, plus a dominator for each removed row.

    Rows are compared on ``coords`` only. Exact duplicates keep the lowest
    index. ``can_replace[a, b]`` says a vector for action ``a`` may stand in
    for one with action ``b`` (used when action availability differs).
    """
    k = len(V)
    if k <= 1:
        return np.arange(k), {}
    W = V if coords is None else V[:, list(coords)]
    order = np.lexsort((np.arange(k), -W.sum(axis=1)))
    kept: list[int] = []
    dominator: dict[int, int] = {}
    kept_mat = np.empty((k, W.shape[1]))
    n_kept = 0
    for i in order:
        if n_kept:
            dom = np.all(kept_mat[:n_kept] >= W[i] - DOMINANCE_TOL, axis=1)
            if can_replace is not None and actions is not None:
                dom &= can_replace[actions[kept], actions[i]]
            hit = np.flatnonzero(dom)
            if hit.size:
                dominator[int(i)] = kept[int(hit[0])]
                continue
        kept.append(int(i))
        kept_mat[n_kept] = W[i]
        n_kept += 1
    return np.array(sorted(kept), dtype=int), dominator


def prune_pointwise(vectors: Sequence[AlphaVector]) -> list[AlphaVector]:
    """Drop vectors dominated coordinatewise by another; older vectors win ties."""
    if not vectors:
        return []
    V = np.array([a.values for a in vectors])
    keep, _ = _prune_rows(V)
    return [vectors[i] for i in keep]


def _replace_matrix(model) -> np.ndarray | None:
    """``out[a, b]``: action ``a`` is available wherever action ``b`` is."""
    if not model.restricted:
        return None
    mask = model.action_mask
    return np.all(mask[:, :, None] | ~mask[:, None, :], axis=0)


# --------------------------------------------------------------------------
# lower bound


class LowerBound:
    """Append-only α-vector store with an active (unpruned) subset.

    Every generated vector keeps its values and provenance so controllers
    can be extracted after pruning; pruned vectors are simply inactive.
    """

    def __init__(self, model, initial: Iterable[AlphaVector] = ()):
        self.model = model
        self.vectors: list[AlphaVector] = []
        self._active: list[int] = []
        self._mat = np.zeros((0, model.num_states))
        self._actions = np.zeros(0, dtype=int)
        self._replace = _replace_matrix(model)
        self._dominator: dict[int, int] = {}
        for a in initial:
            self.insert(a, force=True)

    def __len__(self):
        return len(self._active)

    @property
    def active(self) -> list[int]:
        return list(self._active)

    @property
    def matrix(self) -> np.ndarray:
        return self._mat

    def active_vectors(self) -> list[AlphaVector]:
        return [self.vectors[i] for i in self._active]

    def eligible(self, support) -> np.ndarray:
        """Mask over active vectors whose action is available on all of ``support``."""
        if not self.model.restricted:
            return np.ones(len(self._active), dtype=bool)
        allowed = self.model.allowed_actions(support)
        return allowed[self._actions]

    def best(self, b) -> tuple[float, int]:
        """(max over eligible α of α·b, global index of the maximizer)."""
        p = as_probs(b)
        vals = self._mat @ p
        if self.model.restricted:
            vals = np.where(self.eligible(np.flatnonzero(p > 0)), vals, -np.inf)
        j = int(np.argmax(vals))
        return float(vals[j]), self._active[j]

    def value(self, b) -> float:
        return self.best(b)[0]

    def values(self, beliefs) -> np.ndarray:
        """Lower-bound values of each row of ``beliefs``."""
        B = np.atleast_2d(np.asarray(beliefs, dtype=float))
        vals = B @ self._mat.T
        if self.model.restricted:
            for k, row in enumerate(B):
                vals[k, ~self.eligible(np.flatnonzero(row > 0))] = -np.inf
        return vals.max(axis=1)

    def _dominates(self, i_active: np.ndarray, action: int) -> np.ndarray:
        if self._replace is None:
            return np.ones(len(i_active), dtype=bool)
        return self._replace[self._actions[i_active], action]

    def insert(self, alpha: AlphaVector, force: bool = False) -> int | None:
        """Add ``alpha`` unless an active vector dominates it; prune what it dominates.

        Returns the new global index, or None when the vector was dominated.
        """
        v = alpha.values
        if len(self._active) and not force:
            dom = np.all(self._mat >= v - DOMINANCE_TOL, axis=1)
            dom &= self._dominates(np.arange(len(self._active)), alpha.action)
            if dom.any():
                return None
        idx = len(self.vectors)
        self.vectors.append(alpha)
        if len(self._active):
            beaten = np.all(v >= self._mat - DOMINANCE_TOL, axis=1)
            if self._replace is not None:
                beaten &= self._replace[alpha.action, self._actions]
            if force:
                beaten[:] = False
            if beaten.any():
                for j in np.flatnonzero(beaten):
                    self._dominator[self._active[j]] = idx
                keep = ~beaten
                self._active = [a for a, k in zip(self._active, keep) if k]
                self._mat = self._mat[keep]
                self._actions = self._actions[keep]
        self._active.append(idx)
        self._mat = np.vstack([self._mat, v[None, :]])
        self._actions = np.append(self._actions, alpha.action)
        return idx

    def prune(self) -> None:
        keep, dom = _prune_rows(self._mat, actions=self._actions, can_replace=self._replace)
        for j, k in dom.items():
            self._dominator[self._active[j]] = self._active[k]
        self._active = [self._active[i] for i in keep]
        self._mat = self._mat[keep]
        self._actions = self._actions[keep]

    def resolve(self, idx: int) -> int:
        """Map a possibly pruned vector to the earliest active vector dominating it."""
        if idx in self._active:
            return idx
        v = self.vectors[idx].values
        dom = np.all(self._mat >= v - 1e-9, axis=1)
        dom &= self._dominates(np.arange(len(self._active)), self.vectors[idx].action)
        hits = np.flatnonzero(dom)
        if hits.size:
            return min(self._active[h] for h in hits)
        # fall back to the recorded chain of dominators
        seen = set()
        while idx not in self._active:
            if idx in seen or idx not in self._dominator:
                raise LookupError(f"no active vector dominates vector {idx}")
            seen.add(idx)
            idx = self._dominator[idx]
        return idx


# --------------------------------------------------------------------------
# upper bound


_HUGE = 1e300


class UpperBound:
    """Corner values plus belief/value points, evaluated by sawtooth interpolation."""

    PRUNE_FACTOR = 2

    def __init__(self, corner_values):
        self.corner = np.array(corner_values, dtype=float)
        n = self.corner.size
        self._P = np.zeros((0, n))
        self._v = np.zeros(0)
        self._excess: np.ndarray | None = None
        self._prune_at = 16

    @property
    def corner_values(self) -> np.ndarray:
        return self.corner.copy()

    @property
    def points(self) -> list[tuple[np.ndarray, float]]:
        return [(p.copy(), float(v)) for p, v in zip(self._P, self._v)]

    def __len__(self):
        return len(self._v)

    def _saw(self, B: np.ndarray, P: np.ndarray, v: np.ndarray, excess=None) -> np.ndarray:
        """Sawtooth values of the rows of ``B`` against points ``P`` with values ``v``."""
        base = B @ self.corner
        if len(v) == 0:
            return base
        if excess is None:
            excess = v - P @ self.corner
        # ratio_k = min over supp(P_k) of b_s / P_ks, zero if supp(P_k) leaves supp(b)
        inv = np.where(B > 0, 1.0 / np.where(B > 0, B, 1.0), _HUGE)
        ratio = 1.0 / (P[None, :, :] * inv[:, None, :]).max(axis=2)
        return base + np.minimum(0.0, (ratio * excess).min(axis=1))

    def _cached_excess(self) -> np.ndarray:
        if self._excess is None:
            self._excess = self._v - self._P @ self.corner
        return self._excess

    def values(self, beliefs) -> np.ndarray:
        B = np.atleast_2d(np.asarray(beliefs, dtype=float))
        return self._saw(B, self._P, self._v, self._cached_excess())

    def value(self, b) -> float:
        return float(self.values(as_probs(b)[None, :])[0])

    def insert(self, b, v: float) -> bool:
        p = as_probs(b)
        if self.value(p) <= v + 1e-12:
            return False
        self._excess = None
        supp = np.flatnonzero(p > 0)
        if supp.size == 1:
            self.corner[supp[0]] = v
            return True
        self._P = np.vstack([self._P, p[None, :]])
        self._v = np.append(self._v, v)
        if len(self._v) >= self._prune_at:
            self.prune()
            self._prune_at = max(16, self.PRUNE_FACTOR * len(self._v))
        return True

    def prune(self) -> None:
        """Remove points that the remaining points (and corners) already bound."""
        keep = np.ones(len(self._v), dtype=bool)
        for k in range(len(self._v)):
            keep[k] = False
            if self._saw(self._P[k : k + 1], self._P[keep], self._v[keep])[0] > self._v[k] + 1e-12:
                keep[k] = True
        self._P = self._P[keep]
        self._v = self._v[keep]
        self._excess = None


def sawtooth_value(ub: UpperBound, b) -> float:
    return ub.value(b)


def ub_insert(ub: UpperBound, b, v: float) -> None:
    ub.insert(b, v)


# --------------------------------------------------------------------------
# bounds initialisation


def fib_bound(m, tol: float = 1e-6, max_iter: int = 100_000) -> np.ndarray:
    """Per-state upper bound from the fast informed bound iteration, started from above."""
    g = m.discount
    R = m.reward
    Q = np.full(R.shape, R.max() / (1.0 - g))
    J = m.joint  # (A, Z, S, S)
    for _ in range(max_iter):
        cont = np.einsum("azst,tb->azsb", J, Q).max(axis=3).sum(axis=1)  # (A, S)
        new = R + g * cont.T
        delta = np.abs(new - Q).max()
        Q = new
        if delta <= tol:
            break
    return Q.max(axis=1)


def blind_bound(m, tol: float = 1e-6, max_iter: int | None = None) -> list[AlphaVector]:
    """One always-play-``a`` vector per action, started from the worst reward."""
    g = m.discount
    R = m.reward
    out = []
    limit = 100_000 if max_iter is None else max_iter
    for a in range(m.num_actions):
        alpha = np.full(m.num_states, R[:, a].min() / (1.0 - g))
        for _ in range(limit):
            new = R[:, a] + g * (m.transition[a] @ alpha)
            delta = np.abs(new - alpha).max()
            alpha = new
            if delta <= tol:
                break
        out.append(AlphaVector(alpha, a, None, blind=True))
    return out


# --------------------------------------------------------------------------
# point-based backup


def backup(m, lb: LowerBound, b) -> AlphaVector:
    """Point-based Bellman backup of ``lb`` at belief ``b`` with provenance."""
    p = as_probs(b)
    g = m.discount
    J = m.joint
    V = lb.matrix
    active = np.array(lb.active)
    allowed = m.allowed_actions(np.flatnonzero(p > 0))
    best_val, best = -np.inf, None
    for a in np.flatnonzero(allowed):
        Bz = np.einsum("s,zst->zt", p, J[a])  # unnormalised successor beliefs
        scores = Bz @ V.T  # (Z, K)
        succ = []
        for z in range(m.num_observations):
            w = Bz[z]
            if w.sum() <= 1e-300:
                # unreachable from b: continue with the best vector for the
                # predicted successor distribution instead
                w = p @ m.transition[a]
                sc = V @ w
            else:
                sc = scores[z]
            if m.restricted:
                sc = np.where(lb.eligible(np.flatnonzero(w > 0)), sc, -np.inf)
            succ.append(int(np.argmax(sc)))
        cont = sum(J[a, z] @ V[succ[z]] for z in range(m.num_observations))
        values = m.reward[:, a] + g * cont
        val = float(values @ p)
        if val > best_val + 1e-15:
            best_val = val
            best = AlphaVector(values, int(a), tuple(int(active[j]) for j in succ))
    return best


# --------------------------------------------------------------------------
# exact finite-horizon sets


@dataclass
class GammaStack:
    """Γ_1 .. Γ_H; successors of a level-t vector index into level t-1."""

    levels: list[list[AlphaVector]] = field(default_factory=list)
    num_observations: int = 0

    @property
    def horizon(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> list[AlphaVector]:
        return self.levels[-1]

    def matrix(self, t: int | None = None) -> np.ndarray:
        level = self.levels[-1 if t is None else t - 1]
        return np.array([a.values for a in level])

    def value(self, b, t: int | None = None) -> float:
        return float(np.max(self.matrix(t) @ as_probs(b)))


def reachable_supports(m, start: Iterable[int], steps: int) -> list[np.ndarray]:
    """States reachable after 0..steps-1 transitions from ``start`` under any actions."""
    cur = np.zeros(m.num_states, dtype=bool)
    cur[list(start)] = True
    out = [np.flatnonzero(cur)]
    reach = m.transition.max(axis=0) > 0  # (S, S)
    for _ in range(steps - 1):
        cur = reach[cur].any(axis=0)
        out.append(np.flatnonzero(cur))
    return out


def exact_gamma(
    m,
    H: int,
    prune: bool = True,
    support: Iterable[int] | None = None,
    cap: int = 1_000_000,
) -> GammaStack:
    """Exact α-vector sets Γ_1..Γ_H with discounting inside the backup.

    With ``support`` given, level t is pruned only on the states reachable
    ``H - t`` steps after starting in ``support``; vectors are still exact
    policy values on every state, so extracted controllers remain valid.
    Restricted actions are admitted at a level only if available on every
    state reachable at that step.
    """
    if H < 1 or H != int(H):
        raise ValueError(f"horizon must be a positive integer, got {H}")
    H = int(H)
    S, Z = m.num_states, m.num_observations
    g = m.discount
    J = m.joint
    replace = _replace_matrix(m)
    if prune and support is not None:
        supports = reachable_supports(m, support, H)
    else:
        supports = [None] * H
    coords_for_level = lambda t: supports[H - t]  # noqa: E731 - level t is used at step H-t

    def prune_level(V, acts, coords):
        if not prune:
            return np.arange(len(V))
        keep, _ = _prune_rows(V, coords, acts, replace)
        return keep

    def actions_for_level(t):
        coords = coords_for_level(t)
        return np.flatnonzero(m.allowed_actions(range(S) if coords is None else coords))

    acts1 = actions_for_level(1)
    level1 = np.array([m.reward[:, a] for a in acts1])
    keep = prune_level(level1, acts1, coords_for_level(1))
    stack = GammaStack([[AlphaVector(level1[i], int(acts1[i]), None) for i in keep]], Z)

    for t in range(2, H + 1):
        prev = stack.matrix(t - 1)
        coords = coords_for_level(t)
        all_vals, all_acts, all_succ = [], [], []
        for a in actions_for_level(t):
            # projections g_{a,z}^j = γ Σ_{s'} P(s',z|s,a) α_j(s'), pruned per z
            proj = []
            for z in range(Z):
                P = g * (prev @ J[a, z].T)  # (K, S)
                idx = prune_level(P, np.full(len(P), a), coords)
                proj.append((P[idx], idx[:, None]))
            vals, succ = proj[0]
            for z in range(1, Z):
                pv, pi = proj[z]
                if len(vals) * len(pv) > cap:
                    raise BlowupGuard(f"cross-sum at level {t} would exceed {cap} vectors")
                vals = (vals[:, None, :] + pv[None, :, :]).reshape(-1, S)
                succ = np.concatenate(
                    [np.repeat(succ, len(pv), axis=0), np.tile(pi, (len(succ), 1))], axis=1
                )
                idx = prune_level(vals, np.full(len(vals), a), coords)
                vals, succ = vals[idx], succ[idx]
            all_vals.append(vals + m.reward[:, a])
            all_acts.append(np.full(len(vals), a))
            all_succ.append(succ)
        V = np.concatenate(all_vals)
        acts = np.concatenate(all_acts)
        succ = np.concatenate(all_succ)
        keep = prune_level(V, acts, coords)
        if len(keep) > cap:
            raise BlowupGuard(f"level {t} has {len(keep)} vectors (cap {cap})")
        stack.levels.append(
            [AlphaVector(V[i], int(acts[i]), tuple(int(x) for x in succ[i])) for i in keep]
        )
    return stack
