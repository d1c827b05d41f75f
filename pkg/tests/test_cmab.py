import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from admm_opt import cmab
from admm_opt.space import build_space


def space_2x3():
    return build_space({"modules": [
        {"name": "m1", "algorithms": [{"name": f"a{i}"} for i in range(2)]},
        {"name": "m2", "algorithms": [{"name": f"b{i}"} for i in range(3)]},
    ]})


def space_3x3():
    return build_space({"modules": [
        {"name": f"m{j}", "algorithms": [{"name": f"a{i}"} for i in range(3)]}
        for j in range(2)]})


class TestSelectArms:
    def test_per_module_argmax(self):
        sp = space_2x3()
        z = cmab.select_arms(sp, np.array([0.2, 0.7, 0.9, 0.1, 0.5]))
        assert z.choice == (1, 0)

    def test_all_equal_picks_first(self):
        sp = space_2x3()
        z = cmab.select_arms(sp, np.array([0.4] * 5))
        assert z.choice == (0, 0)

    def test_matches_bruteforce_maximization(self):
        rng = np.random.default_rng(17)
        sp = space_2x3()
        for _ in range(200):
            omega = rng.uniform(size=5)
            got = cmab.select_arms(sp, omega)
            slices = [omega[0:2], omega[2:5]]
            best = max(
                itertools.product(range(2), range(3)),
                key=lambda c: slices[0][c[0]] + slices[1][c[1]])
            assert sum(slices[i][got.choice[i]] for i in range(2)) == \
                pytest.approx(slices[0][best[0]] + slices[1][best[1]])

    @given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
    def test_one_hot_constraint(self, omega):
        sp = space_2x3()
        z = cmab.select_arms(sp, np.array(omega))
        assert len(z.choice) == 2
        assert 0 <= z.choice[0] < 2 and 0 <= z.choice[1] < 3


class TestRewardFromLoss:
    def test_interior(self):
        assert cmab.reward_from_loss(0.35, 0.7) == pytest.approx(0.5)

    def test_upper_clip(self):
        assert cmab.reward_from_loss(0.9, 0.7) == 0.0

    def test_lower_clip(self):
        assert cmab.reward_from_loss(0.0, 0.7) == 1.0

    @given(st.floats(-1e6, 1e6), st.floats(0.01, 10))
    def test_always_in_unit_interval(self, loss, f_hat):
        r = cmab.reward_from_loss(loss, f_hat)
        assert 0.0 <= r <= 1.0

    def test_bad_upper_bound_rejected(self):
        with pytest.raises(ValueError):
            cmab.reward_from_loss(0.5, 0.0)


class FakeRng:
    """Deterministic stand-in driving one Thompson round."""

    def __init__(self, omega, coin):
        self.omega = np.asarray(omega, dtype=float)
        self.coin = coin

    def beta(self, a, d):
        assert a.shape == self.omega.shape
        return self.omega

    def uniform(self):
        return self.coin


class TestCmabRound:
    def test_bookkeeping_on_selected_arms_only(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)
        rng = FakeRng([0.1, 0.9, 0.2, 0.8, 0.3], coin=0.0)  # reward -> 1
        z, loss = cmab.cmab_round(state, lambda z: 0.21, rng)
        assert z.choice == (1, 1)
        picked = {state.arm_index(0, 1), state.arm_index(1, 1)}
        for arm in range(state.n_arms):
            assert state.n[arm] == (1.0 if arm in picked else 0.0)
            assert state.r[arm] == (1.0 if arm in picked else 0.0)

    def test_zero_reward_branch(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)
        rng = FakeRng([1, 0, 1, 0, 0], coin=0.999)  # r_tilde=0.7 < 0.999 -> 0
        cmab.cmab_round(state, lambda z: 0.21, rng)
        assert state.r.sum() == 0.0 and state.n.sum() == 2.0

    def test_objective_failure_leaves_state_unchanged(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)

        def broken(z):
            raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            cmab.cmab_round(state, broken, np.random.default_rng(0))
        assert state.n.sum() == 0 and state.rounds == 0

    def test_degenerate_zero_loss_environment(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)
        rng = np.random.default_rng(3)
        for _ in range(100):
            cmab.cmab_round(state, lambda z: 0.0, rng)
        means = state.r[state.n > 0] / state.n[state.n > 0]
        assert np.all(means == 1.0)

    def test_identifies_planted_optimum(self):
        sp = space_3x3()
        optimal = (1, 2)

        def objective(z):
            return 0.1 if z.choice == optimal else 0.6

        hits = 0
        for seed in range(30):
            state = cmab.BanditState(sp)
            rng = np.random.default_rng(seed)
            best = None
            for _ in range(500):
                z, loss = cmab.cmab_round(state, objective, rng)
                if best is None or loss < best[1]:
                    best = (z.choice, loss)
            hits += best[0] == optimal
        assert hits >= 27  # full 100-seed version in the acceptance suite


class TestConservation:
    def test_counts_and_rewards(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)
        rng = np.random.default_rng(12)
        for k in range(60):
            cmab.cmab_round(state, lambda z: float(rng.uniform(0, 1)), rng)
        assert state.n.sum() == 2 * 60
        assert np.all(state.r <= state.n)
        alpha, delta = state.posterior_params()
        assert np.all(alpha > 0) and np.all(delta > 0)

    def test_posterior_mean_monotone_in_successes(self):
        sp = space_2x3()
        state = cmab.BanditState(sp)
        state.n[0] = state.n[1] = 20
        state.r[0] = 15
        state.r[1] = 5
        alpha, delta = state.posterior_params()
        mean = alpha / (alpha + delta)
        assert mean[0] > mean[1]


class TestSolveZMin:
    def test_exhaustive_is_true_argmin_108(self):
        sp = build_space({"modules": [
            {"name": "scaler", "algorithms": [{"name": f"s{i}"}
                                              for i in range(6)]},
            {"name": "transform", "algorithms": [{"name": f"t{i}"}
                                                 for i in range(3)]},
            {"name": "estimator", "algorithms": [{"name": f"e{i}"}
                                                 for i in range(6)]},
        ]})
        assert sp.n_combinations == 108
        rng = np.random.default_rng(9)
        table = {z.choice: float(rng.uniform()) for z in sp.iter_assignments()}
        z, v = cmab.solve_z_min("exhaustive", sp, lambda z: table[z.choice],
                                0, np.random.default_rng(0))
        assert v == min(table.values())
        assert table[z.choice] == v

    def test_exhaustive_cap_enforced(self):
        sp = space_3x3()
        with pytest.raises(ValueError, match="cap"):
            cmab.solve_z_min("exhaustive", sp, lambda z: 0.0, 0,
                             np.random.default_rng(0), exhaustive_cap=4)

    def test_random_budget_one(self):
        sp = space_2x3()
        z, v = cmab.solve_z_min("random", sp, lambda z: 1.0, 1,
                                np.random.default_rng(1))
        assert len(z.choice) == 2 and v == 1.0

    def test_budget_below_one_rejected(self):
        sp = space_2x3()
        with pytest.raises(ValueError):
            cmab.solve_z_min("random", sp, lambda z: 0.0, 0,
                             np.random.default_rng(0))

    def test_heuristics_never_beat_exhaustive(self):
        sp = space_3x3()
        rng = np.random.default_rng(31)
        table = {z.choice: float(rng.uniform()) for z in sp.iter_assignments()}
        obj = lambda z: table[z.choice]
        _, exact = cmab.solve_z_min("exhaustive", sp, obj, 0,
                                    np.random.default_rng(0))
        for strategy in ("random", "cmab"):
            _, v = cmab.solve_z_min(strategy, sp, obj, 40,
                                    np.random.default_rng(5))
            assert v >= exact - 1e-12

    def test_cmab_state_persists_across_solver_calls(self):
        sp = space_2x3()
        solver = cmab.CmabZSolver()
        solver.solve(sp, lambda z: 0.3, 10, np.random.default_rng(0))
        assert solver.state.rounds == 10
        solver.solve(sp, lambda z: 0.3, 5, np.random.default_rng(1))
        assert solver.state.rounds == 15
