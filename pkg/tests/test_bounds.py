import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_pomdp.bounds import (
    AlphaVector,
    BlowupGuard,
    LowerBound,
    UpperBound,
    backup,
    blind_bound,
    exact_gamma,
    fib_bound,
    prune_pointwise,
    sawtooth_value,
    ub_insert,
)
from robust_pomdp.model import Belief, Pomdp, env_slice
from robust_pomdp.policy import PolicyGraph, PolicyNode, evaluate_fsc_exact

from oracles import deterministic_policies, policy_value, random_me


def single_state(reward=1.0, discount=0.5):
    return Pomdp(
        states=["s"],
        actions=["a"],
        observations=["z"],
        transition=[[[1.0]]],
        observation=[[[1.0]]],
        reward=[[reward]],
        initial_belief=[1.0],
        discount=discount,
    )


def random_pomdp(seed, S=2, A=2, Z=2, discount=0.9, horizon=3):
    rng = np.random.default_rng(seed)
    return Pomdp(
        states=[f"s{i}" for i in range(S)],
        actions=[f"a{i}" for i in range(A)],
        observations=[f"z{i}" for i in range(Z)],
        transition=rng.dirichlet(np.ones(S), size=(A, S)),
        observation=rng.dirichlet(np.ones(Z), size=(A, S)),
        reward=np.round(rng.uniform(-1, 1, size=(S, A)), 2),
        initial_belief=rng.dirichlet(np.ones(S)),
        discount=discount,
        horizon=horizon,
    )


def brute_force_at(m, b, H):
    return max(
        policy_value(m.transition, m.observation, m.reward, b, m.discount, H, pi)
        for pi in deterministic_policies(m.num_actions, m.num_observations, H)
    )


class TestExactGamma:
    def test_horizon_one_is_rewards(self):
        m = random_pomdp(0)
        st_ = exact_gamma(m, 1)
        assert len(st_.top) == 2
        for v in st_.top:
            assert np.array_equal(v.values, m.reward[:, v.action])

    def test_unpruned_cross_sum_count(self):
        assert len(exact_gamma(random_pomdp(1), 2, prune=False).top) == 8

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force(self, seed):
        m = random_pomdp(seed)
        stack = exact_gamma(m, 3)
        rng = np.random.default_rng(100 + seed)
        for b in rng.dirichlet(np.ones(2), size=100):
            assert stack.value(b) == pytest.approx(brute_force_at(m, b, 3), abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_every_level_is_optimal(self, seed):
        me = random_me(seed)
        m = env_slice(me, 0)
        stack = exact_gamma(m, 3)
        rng = np.random.default_rng(seed)
        for t in (1, 2, 3):
            for b in rng.dirichlet(np.ones(m.num_states), size=5):
                assert stack.value(b, t) == pytest.approx(brute_force_at(m, b, t), abs=1e-9)

    def test_pruning_keeps_the_envelope(self):
        m = random_pomdp(4, S=3)
        full = exact_gamma(m, 3, prune=False)
        pruned = exact_gamma(m, 3, prune=True)
        assert len(pruned.top) < len(full.top)
        for b in np.random.default_rng(0).dirichlet(np.ones(3), size=200):
            assert pruned.value(b) == pytest.approx(full.value(b), abs=1e-12)

    def test_blowup_guard(self):
        with pytest.raises(BlowupGuard):
            exact_gamma(random_pomdp(5, S=3, Z=2), 4, prune=False, cap=50)

    def test_undiscounted_finite_horizon(self):
        m = single_state(discount=1.0)
        assert exact_gamma(m, 4).value([1.0]) == pytest.approx(4.0)

    def test_rejects_bad_horizon(self):
        with pytest.raises(ValueError):
            exact_gamma(single_state(), 0)


class TestPrune:
    def test_strict_domination(self):
        out = prune_pointwise([AlphaVector([1, 1], 0), AlphaVector([0, 0], 1)])
        assert [tuple(v.values) for v in out] == [(1, 1)]

    def test_incomparable_kept(self):
        assert len(prune_pointwise([AlphaVector([1, 0], 0), AlphaVector([0, 1], 0)])) == 2

    def test_duplicates_keep_the_older(self):
        a, b = AlphaVector([2, 3], 0), AlphaVector([2, 3], 1)
        assert prune_pointwise([a, b]) == [a]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_envelope_unchanged(self, seed):
        rng = np.random.default_rng(seed)
        S = int(rng.integers(1, 5))
        V = rng.integers(-3, 4, size=(int(rng.integers(1, 15)), S)).astype(float)
        vectors = [AlphaVector(v, 0) for v in V]
        kept = np.array([v.values for v in prune_pointwise(vectors)])
        B = rng.dirichlet(np.ones(S), size=1000)
        assert np.allclose((B @ kept.T).max(axis=1), (B @ V.T).max(axis=1), atol=1e-12)
        # nothing left is dominated by another survivor
        for i in range(len(kept)):
            for j in range(len(kept)):
                if i != j:
                    assert not np.all(kept[j] >= kept[i])


class TestFibAndBlind:
    def test_single_state_fixed_points(self):
        m = single_state()
        assert fib_bound(m)[0] == pytest.approx(2.0, abs=1e-5)
        assert blind_bound(m)[0].values[0] == pytest.approx(2.0, abs=1e-5)

    def test_blind_after_zero_iterations(self):
        m = random_pomdp(2)
        out = blind_bound(m, max_iter=0)
        for v in out:
            assert np.all(v.values == m.reward[:, v.action].min() / (1 - m.discount))

    def test_fib_on_fully_observable_model_is_mdp_value(self):
        rng = np.random.default_rng(0)
        S, A = 3, 2
        T = rng.dirichlet(np.ones(S), size=(A, S))
        R = rng.normal(size=(S, A))
        m = Pomdp(
            states=["a", "b", "c"],
            actions=["x", "y"],
            observations=["a", "b", "c"],
            transition=T,
            observation=np.stack([np.eye(S)] * A),
            reward=R,
            initial_belief=[1, 0, 0],
            discount=0.9,
        )
        V = np.zeros(S)
        for _ in range(2000):
            V = (R + 0.9 * np.einsum("ast,t->sa", T, V)).max(axis=1)
        assert np.allclose(fib_bound(m, tol=1e-10), V, atol=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_bracketing(self, seed):
        m = random_pomdp(seed, S=3)
        upper = fib_bound(m)
        blind = np.array([v.values for v in blind_bound(m)])
        assert np.all(upper >= blind.max(axis=0) - 1e-9)
        stack = exact_gamma(m, 3)
        for s in range(3):
            # any continuation after three steps loses at most this much
            tail = m.discount**3 * max(0.0, -m.reward.min()) / (1 - m.discount)
            assert upper[s] >= stack.value(np.eye(3)[s]) - tail - 1e-9

    @pytest.mark.parametrize("seed", range(4))
    def test_blind_below_always_a_controller(self, seed):
        m = random_pomdp(seed, S=3, horizon=math.inf)
        for v in blind_bound(m, max_iter=7):
            g = PolicyGraph((PolicyNode(v.action, (0,) * m.num_observations),), 0)
            assert np.all(v.values <= evaluate_fsc_exact(m, g) + 1e-9)


class TestBackup:
    def test_zero_continuation_is_myopic(self):
        m = random_pomdp(3)
        lb = LowerBound(m, [AlphaVector(np.zeros(2), 0)])
        b = np.array([0.3, 0.7])
        alpha = backup(m, lb, b)
        best = int(np.argmax(b @ m.reward))
        assert alpha.action == best
        assert np.allclose(alpha.values, m.reward[:, best])

    def test_geometric_series(self):
        m = single_state()
        lb = LowerBound(m, [AlphaVector([0.0], 0)])
        for _ in range(60):
            lb.insert(backup(m, lb, [1.0]))
        assert lb.value([1.0]) == pytest.approx(2.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_backup_never_loses_value_at_its_belief(self, seed):
        m = random_pomdp(seed % 1000, S=3)
        lb = LowerBound(m, blind_bound(m))
        rng = np.random.default_rng(seed)
        for b in rng.dirichlet(np.ones(3), size=5):
            before = lb.value(b)
            alpha = backup(m, lb, b)
            assert alpha.values @ b >= before - 1e-12
            lb.insert(alpha)
            assert lb.value(b) >= before - 1e-12

    def test_lower_bound_envelope_is_monotone(self):
        m = random_pomdp(11, S=3)
        lb = LowerBound(m, blind_bound(m))
        probe = np.random.default_rng(1).dirichlet(np.ones(3), size=200)
        prev = lb.values(probe)
        for b in np.random.default_rng(2).dirichlet(np.ones(3), size=30):
            lb.insert(backup(m, lb, b))
            cur = lb.values(probe)
            assert np.all(cur >= prev - 1e-12)
            prev = cur


class TestUpperBound:
    def test_corners_only(self):
        ub = UpperBound([1.0, 3.0])
        assert sawtooth_value(ub, [0.25, 0.75]) == pytest.approx(2.5)

    def test_value_at_stored_point(self):
        ub = UpperBound([4.0, 4.0])
        ub_insert(ub, [0.5, 0.5], 1.0)
        assert sawtooth_value(ub, [0.5, 0.5]) <= 1.0 + 1e-12
        # halfway to a corner the bound rises linearly
        assert sawtooth_value(ub, [0.75, 0.25]) == pytest.approx(2.5)

    def test_insert_above_is_noop(self):
        ub = UpperBound([1.0, 1.0])
        ub_insert(ub, [0.5, 0.5], 2.0)
        assert len(ub) == 0

    def test_corner_insert_lowers_corner(self):
        ub = UpperBound([5.0, 5.0])
        ub_insert(ub, [1.0, 0.0], 2.0)
        assert ub.corner_values[0] == 2.0
        assert sawtooth_value(ub, Belief.point(2, 0)) == 2.0

    def test_repeated_inserts_are_stable(self):
        ub = UpperBound([5.0, 5.0, 5.0])
        for _ in range(5):
            ub_insert(ub, [0.2, 0.3, 0.5], 1.0)
        assert len(ub) == 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonincreasing_and_concave_consistent(self, seed):
        rng = np.random.default_rng(seed)
        S = int(rng.integers(2, 5))
        ub = UpperBound(rng.uniform(5, 10, size=S))
        probe = rng.dirichlet(np.ones(S), size=50)
        prev = ub.values(probe)
        for _ in range(40):
            b = rng.dirichlet(np.ones(S) * 0.5)
            ub_insert(ub, b, float(rng.uniform(0, 5)))
            cur = ub.values(probe)
            assert np.all(cur <= prev + 1e-12)
            prev = cur
        b1, b2 = rng.dirichlet(np.ones(S), size=2)
        corner = lambda b: float(b @ ub.corner_values)  # noqa: E731
        assert ub.value(0.5 * b1 + 0.5 * b2) <= 0.5 * (corner(b1) + corner(b2)) + 1e-9

    def test_pruned_points_are_useful(self):
        rng = np.random.default_rng(5)
        ub = UpperBound(np.full(3, 10.0))
        for _ in range(200):
            ub_insert(ub, rng.dirichlet(np.ones(3)), float(rng.uniform(0, 10)))
        ub.prune()
        pts = ub.points
        for k, (p, v) in enumerate(pts):
            rest = UpperBound(ub.corner_values)
            for j, (q, w) in enumerate(pts):
                if j != k:
                    rest._P = np.vstack([rest._P, q[None]])
                    rest._v = np.append(rest._v, w)
            assert v <= rest.value(p) + 1e-9

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        ub = UpperBound(rng.uniform(1, 2, size=4))
        for _ in range(30):
            ub_insert(ub, rng.dirichlet(np.ones(4)), float(rng.uniform(0, 1)))
        B = rng.dirichlet(np.ones(4) * 0.3, size=20)
        B[0] = [0, 0, 1, 0]
        assert np.allclose(ub.values(B), [ub.value(b) for b in B])

