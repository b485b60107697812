import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from robust_pomdp.benchmarks import bird_fixture, prop1_fixture
from robust_pomdp.bounds import AlphaVector, LowerBound, UpperBound, blind_bound, exact_gamma, fib_bound
from robust_pomdp.hsvi import (
    SolveConfig,
    ab_hsvi,
    default_epsilon,
    default_max_depth,
    explore,
    gap,
    solve_exact,
    solve_me,
    write_trace,
)
from robust_pomdp.model import AbPomdp, Pomdp
from robust_pomdp.transforms import me_to_ab

from oracles import random_me
from reference import truncation_horizon

# random_me seeds whose long-horizon exact solve is cheap
ORACLE_SEEDS = [0, 9, 10, 17, 23, 31, 43]


def infinite(me):
    return replace(me, horizon=math.inf)


def one_state_ab(reward=1.0, discount=0.5):
    return AbPomdp(
        states=["s"],
        actions=["a", "b"],
        observations=["z"],
        transition=np.ones((2, 1, 1)),
        observation=np.ones((2, 1, 1)),
        reward=[[reward, 0.0]],
        belief_support=(0,),
        discount=discount,
    )


def as_ab(m: Pomdp, Q):
    return AbPomdp(
        states=m.states,
        actions=m.actions,
        observations=m.observations,
        transition=m.transition,
        observation=m.observation,
        reward=m.reward,
        belief_support=tuple(Q),
        discount=m.discount,
    )


def small_pomdp(seed, S=3):
    rng = np.random.default_rng(seed)
    return Pomdp(
        states=[f"s{i}" for i in range(S)],
        actions=["a0", "a1"],
        observations=["z0", "z1"],
        transition=rng.dirichlet(np.ones(S), size=(2, S)),
        observation=rng.dirichlet(np.ones(2), size=(2, S)),
        reward=np.round(rng.uniform(-1, 1, size=(S, 2)), 2),
        initial_belief=np.full(S, 1 / S),
        discount=0.9,
    )


class TestGap:
    def test_corner_bound_against_zero_vector(self):
        m = one_state_ab()
        ub = UpperBound([5.0])
        lb = LowerBound(m, [AlphaVector(np.zeros(1), 0)])
        assert gap(ub, lb, [1.0]) == 5.0

    def test_matching_bounds(self):
        m = one_state_ab(reward=1.0, discount=0.5)
        ub = UpperBound(fib_bound(m))
        lb = LowerBound(m, blind_bound(m))
        assert gap(ub, lb, [1.0]) == pytest.approx(0.0, abs=1e-9)

    def test_root_gap_does_not_grow_across_explore(self):
        ab, _ = me_to_ab(bird_fixture())
        ub = UpperBound(fib_bound(ab))
        lb = LowerBound(ab, blind_bound(ab))
        cfg = SolveConfig(epsilon=0.5)
        b = np.zeros(ab.num_states)
        b[list(ab.belief_support)] = 1 / len(ab.belief_support)
        before = gap(ub, lb, b)
        for _ in range(5):
            explore(ab, ub, lb, b, 0, cfg)
            after = gap(ub, lb, b)
            assert after <= before + 1e-12
            before = after


class TestExplore:
    def test_converged_belief_is_left_alone(self):
        m = one_state_ab()
        ub = UpperBound(fib_bound(m))
        lb = LowerBound(m, blind_bound(m))
        n_ub, n_lb = len(ub), len(lb.vectors)
        corner = ub.corner_values
        explore(m, ub, lb, [1.0], 0, SolveConfig(epsilon=0.1))
        assert len(ub) == n_ub and len(lb.vectors) == n_lb
        assert np.array_equal(ub.corner_values, corner)

    def test_single_state_converges_in_one_trial(self):
        m = one_state_ab(reward=1.0, discount=0.5)
        m = replace(m, reward=np.array([[1.0, 1.5]]))
        res = ab_hsvi(m, SolveConfig(epsilon=0.01))
        assert res.converged and res.iterations <= 1
        assert res.lb_value == pytest.approx(3.0, abs=0.01)


class TestAbHsvi:
    def test_bird_fixture(self):
        ab, _ = me_to_ab(bird_fixture())
        res = ab_hsvi(ab, SolveConfig(epsilon=0.5, time_limit_s=120))
        assert res.converged
        assert res.ub_value - 0.5 <= res.lb_value <= res.ub_value
        assert set(res.worst_belief.support) <= set(ab.belief_support)

    def test_singleton_support(self):
        m = small_pomdp(1)
        res = ab_hsvi(as_ab(m, [2]), SolveConfig(epsilon=0.05, time_limit_s=60))
        assert res.converged and res.gap <= 0.05
        assert res.worst_belief.probs[2] == 1.0

    @pytest.mark.parametrize("seed", ORACLE_SEEDS)
    def test_bounds_bracket_the_exact_value(self, seed):
        ab, _ = me_to_ab(infinite(random_me(seed)))
        exact = solve_exact(ab, truncation_horizon(ab, 1e-4), cap=20_000)
        rng = np.random.default_rng(seed)
        Q = list(ab.belief_support)
        probes = np.zeros((200, ab.num_states))
        probes[:, Q] = rng.dirichlet(np.ones(len(Q)), size=200)
        top = exact.stack.matrix()
        truth = (probes @ top.T).max(axis=1)
        checked = []

        def check(it, lb, ub):
            assert np.all(lb.values(probes) <= truth + 1e-4)
            assert np.all(ub.values(probes) >= truth - 1e-4)
            checked.append(it)

        res = ab_hsvi(ab, SolveConfig(epsilon=0.05, time_limit_s=60, on_iteration=check))
        assert checked
        assert res.converged
        for row in res.trace:
            assert row.lb - 1e-4 <= exact.value <= row.ub + 1e-4

    def test_trace_is_reproducible(self):
        ab, _ = me_to_ab(infinite(random_me(4)))
        cfg = SolveConfig(epsilon=0.05, max_iterations=15)
        a = ab_hsvi(ab, cfg).trace
        b = ab_hsvi(ab, cfg).trace
        strip = lambda rows: [(r.iteration, r.lb, r.ub, r.gap) for r in rows]  # noqa: E731
        assert strip(a) == strip(b)

    def test_trace_rows(self):
        ab, _ = me_to_ab(infinite(random_me(7)))
        res = ab_hsvi(ab, SolveConfig(epsilon=0.05, max_iterations=20))
        times = [r.elapsed_s for r in res.trace]
        assert times == sorted(times)
        assert [r.iteration for r in res.trace] == list(range(len(res.trace)))
        assert all(r.lb <= r.ub + 1e-7 for r in res.trace)

    def test_time_limit(self):
        ab, _ = me_to_ab(infinite(random_me(13)))
        res = ab_hsvi(ab, SolveConfig(epsilon=1e-6, time_limit_s=0.5))
        assert not res.converged
        assert res.wall_time_s < 5
        assert res.lb_value <= res.ub_value + 1e-7

    def test_rejects_undiscounted(self):
        with pytest.raises(ValueError):
            ab_hsvi(replace(one_state_ab(), discount=1.0, horizon=3))

    def test_unweighted_rule_also_converges(self):
        ab, _ = me_to_ab(bird_fixture())
        res = ab_hsvi(ab, SolveConfig(epsilon=0.5, weighted_excess=False, time_limit_s=120))
        assert res.converged


def test_write_trace(tmp_path):
    ab, _ = me_to_ab(bird_fixture())
    path = tmp_path / "trace.csv"
    res = ab_hsvi(ab, SolveConfig(epsilon=2.0, trace_path=str(path)))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iter", "elapsed_s", "lb", "ub", "gap"]
    assert len(rows) == len(res.trace) + 1
    assert rows[-1][2] == f"{res.trace[-1].lb:.9g}"
    write_trace(res.trace, tmp_path / "again.csv")
    assert len((tmp_path / "again.csv").read_text().splitlines()) == len(rows)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=-1.0), dict(time_limit_s=0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolveConfig(**kw)

    def test_default_epsilon(self):
        assert default_epsilon(np.array([[0.0, -10.0], [5.0, 10.0]])) == 0.5
        assert default_epsilon(np.zeros((2, 2))) == 0.1

    def test_default_max_depth(self):
        R = np.array([[0.0, 1.0]])
        expected = math.ceil(math.log(0.1 * 0.1 / 1.0) / math.log(0.9)) + 5
        assert default_max_depth(0.9, 0.1, R) == expected
        assert default_max_depth(0.9, 0.1, np.zeros((1, 1))) == 5


class TestSolveExact:
    def test_prop1(self):
        ab, _ = me_to_ab(prop1_fixture())
        sol = solve_exact(ab)
        assert sol.value == pytest.approx(0.0, abs=1e-7)
        assert np.allclose(sorted(sol.agent.weights[sol.agent.weights > 1e-9]), [0.5, 0.5], atol=1e-7)

    def test_one_step_matrix_game(self):
        m = small_pomdp(5)
        ab = replace(as_ab(m, range(3)), horizon=1)
        from oracles import game_value

        assert solve_exact(ab).value == pytest.approx(game_value(m.reward)[0], abs=1e-9)

    def test_needs_finite_horizon(self):
        with pytest.raises(ValueError):
            solve_exact(as_ab(small_pomdp(0), [0]))


class TestSolveMe:
    def test_single_environment_matches_plain_solve(self):
        m = replace(small_pomdp(2), horizon=3)
        plain = exact_gamma(m, 3).value(m.initial_belief)
        assert solve_me(m, exact=True).value == pytest.approx(plain, abs=1e-9)

    def test_single_environment_infinite_horizon(self):
        m = small_pomdp(3)
        sol = solve_me(m, SolveConfig(epsilon=0.05, time_limit_s=60))
        exact = exact_gamma(m, truncation_horizon(m, 1e-4)).value(m.initial_belief)
        assert sol.converged
        assert sol.lower - 1e-4 <= exact <= sol.upper + 1e-4
        assert sol.upper - sol.lower <= 0.05

    def test_prop1(self):
        assert solve_me(prop1_fixture(), exact=True).value == pytest.approx(0.0, abs=1e-7)

    def test_default_epsilon_from_original_rewards(self):
        sol = solve_me(infinite(bird_fixture()), SolveConfig(max_iterations=0))
        assert sol.raw.epsilon == pytest.approx(0.5)
