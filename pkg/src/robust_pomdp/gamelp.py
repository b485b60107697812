"""Zero-sum game LPs between nature (beliefs over Q) and the agent (mixtures of α-vectors).

Both game LPs are solved by a small dense two-phase simplex with Bland's rule,
so results are deterministic and do not depend on an external solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Belief

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


class LpError(RuntimeError):
    pass


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


class LpNumericalFailure(LpError):
    pass


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    objective: float
    dual_ub: np.ndarray
    dual_eq: np.ndarray
    iterations: int


def _pivot(tab: np.ndarray, basis: list[int], row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    col_vals = tab[:, col].copy()
    col_vals[row] = 0.0
    tab -= np.outer(col_vals, tab[row])
    basis[row] = col


def _simplex(tab: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> int:
    """Maximize the objective stored in the last tableau row (as reduced costs ``-c``).

    Bland's rule: the lowest-index improving column enters, ties in the ratio
    test leave by lowest basic-variable index.
    """
    m = tab.shape[0] - 1
    for it in range(max_iter):
        obj = tab[-1, :-1]
        cand = np.flatnonzero((obj < -PIVOT_TOL) & allowed)
        if cand.size == 0:
            return it
        col = int(cand[0])
        colv = tab[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            raise Unbounded("objective unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, basis, row, col)
    raise LpNumericalFailure(f"simplex did not terminate in {max_iter} pivots")


def lp_solve(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    *,
    maximize: bool = True,
    max_iter: int = 50_000,
) -> LpResult:
    """Solve ``max (or min) c·x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    Duals are reported for the maximization form: ``dual_ub >= 0`` and
    ``c <= A_ub^T dual_ub + A_eq^T dual_eq`` at optimum (sign-flipped for minimize).
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    sign = 1.0 if maximize else -1.0

    # Rows with negative right-hand side are flipped; flipped inequalities
    # get a surplus column and need an artificial, as do all equalities.
    flip_ub = b_ub < 0
    flip_eq = b_eq < 0
    n_slack = m_ub
    art_rows = [i for i in range(m_ub) if flip_ub[i]] + [m_ub + i for i in range(m_eq)]
    n_art = len(art_rows)
    width = n + n_slack + n_art + 1
    tab = np.zeros((m + 1, width))
    basis = [0] * m
    for i in range(m_ub):
        s = -1.0 if flip_ub[i] else 1.0
        tab[i, :n] = s * A_ub[i]
        tab[i, n + i] = s
        tab[i, -1] = s * b_ub[i]
        basis[i] = n + i
    for i in range(m_eq):
        s = -1.0 if flip_eq[i] else 1.0
        tab[m_ub + i, :n] = s * A_eq[i]
        tab[m_ub + i, -1] = s * b_eq[i]
    for k, r in enumerate(art_rows):
        tab[r, n + n_slack + k] = 1.0
        basis[r] = n + n_slack + k

    iters = 0
    all_cols = np.ones(width - 1, dtype=bool)
    if n_art:
        # phase one: maximize -sum(artificials)
        tab[-1, :] = 0.0
        tab[-1, n + n_slack : n + n_slack + n_art] = 1.0
        for r in art_rows:
            tab[-1] -= tab[r]
        iters += _simplex(tab, basis, all_cols, max_iter)
        if tab[-1, -1] < -FEAS_TOL * max(1.0, np.abs(tab[:m, -1]).max(initial=0.0)):
            raise Infeasible("no feasible point")
        # drive remaining artificials out of the basis where possible
        for r in range(m):
            if basis[r] >= n + n_slack:
                row = tab[r, : n + n_slack]
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if nz.size:
                    _pivot(tab, basis, r, int(nz[0]))
    allowed = all_cols.copy()
    allowed[n + n_slack :] = False
    tab[-1, :] = 0.0
    tab[-1, :n] = -sign * c
    for r in range(m):
        j = basis[r]
        if tab[-1, j] != 0.0:
            tab[-1] -= tab[-1, j] * tab[r]
    iters += _simplex(tab, basis, allowed, max_iter)

    x = np.zeros(width - 1)
    for r in range(m):
        x[basis[r]] = tab[r, -1]
    x_orig = x[:n]
    if np.any(x_orig < -1e-7):
        raise LpNumericalFailure("negative primal value at optimum")
    x_orig = np.clip(x_orig, 0.0, None)

    # Dual prices from B^T y = c_B, computed on the original constraint matrix.
    full = np.zeros((m, n + n_slack))
    full[:m_ub, :n] = A_ub
    full[:m_ub, n : n + m_ub] = np.eye(m_ub)
    full[m_ub:, :n] = A_eq
    cost = np.zeros(n + n_slack + n_art)
    cost[:n] = sign * c
    B = np.zeros((m, m))
    cB = np.zeros(m)
    for r in range(m):
        j = basis[r]
        if j < n + n_slack:
            B[:, r] = full[:, j]
        else:
            # artificial left basic on a redundant row
            B[art_rows[j - n - n_slack], r] = 1.0
        cB[r] = cost[j]
    try:
        y = np.linalg.solve(B.T, cB)
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(B.T, cB, rcond=None)[0]
    objective = float(c @ x_orig)
    return LpResult(
        x=x_orig,
        objective=objective,
        dual_ub=sign * y[:m_ub],
        dual_eq=sign * y[m_ub:],
        iterations=iters,
    )


# --------------------------------------------------------------------------
# game LPs


@dataclass(frozen=True)
class NatureSolution:
    belief: Belief
    value: float


@dataclass(frozen=True)
class AgentSolution:
    weights: np.ndarray
    value: float


def _payoff(gamma_set, Q) -> np.ndarray:
    rows = [getattr(a, "values", a) for a in gamma_set]
    if not rows:
        raise ValueError("empty α-vector set")
    Q = list(Q)
    if not Q:
        raise ValueError("empty belief support")
    return np.asarray(rows, dtype=float)[:, Q]


def _undominated_rows(M: np.ndarray) -> np.ndarray:
    """Indices of rows not pointwise dominated by another row (earlier row wins ties)."""
    order = sorted(range(len(M)), key=lambda i: (-M[i].sum(), i))
    kept: list[int] = []
    for i in order:
        if kept and np.any(np.all(M[kept] >= M[i], axis=1)):
            continue
        kept.append(i)
    return np.array(sorted(kept), dtype=int)


def nature_lp(gamma_set, Q, num_states: int | None = None) -> NatureSolution:
    """min over b in Δ(Q) of max over α of α·b.

    Solved as the classic game LP ``max Σw s.t. M' w <= 1`` on the
    positively shifted payoff matrix ``M'``; then ``b = w / Σw``.
    """
    M = _payoff(gamma_set, Q)
    rows = _undominated_rows(M)
    Mr = M[rows]
    shift = 1.0 - Mr.min()
    Ms = Mr + shift
    q = Ms.shape[1]
    res = lp_solve(np.ones(q), Ms, np.ones(len(Ms)))
    total = res.x.sum()
    if total <= 0:
        raise LpNumericalFailure("degenerate nature LP")
    w = res.x / total
    value = float(np.max(M @ w))
    S = num_states if num_states is not None else len(getattr(gamma_set[0], "values", gamma_set[0]))
    full = np.zeros(S)
    full[list(Q)] = w
    full /= full.sum()
    return NatureSolution(belief=Belief(full), value=value)


def agent_lp(gamma_set, Q) -> AgentSolution:
    """max over y in Δ(Γ) of min over s in Q of Σ_α y(α) α(s).

    Solved independently of :func:`nature_lp` as ``min Σu s.t. M'^T u >= 1``,
    so comparing the two values is a genuine duality check.
    """
    M = _payoff(gamma_set, Q)
    rows = _undominated_rows(M)
    Mr = M[rows]
    shift = 1.0 - Mr.min()
    Ms = Mr + shift
    k = Ms.shape[0]
    res = lp_solve(np.ones(k), -Ms.T, -np.ones(Ms.shape[1]), maximize=False)
    total = res.x.sum()
    if total <= 0:
        raise LpNumericalFailure("degenerate agent LP")
    y = np.zeros(len(M))
    y[rows] = res.x / total
    value = float(np.min(y @ M))
    return AgentSolution(weights=y, value=value)
