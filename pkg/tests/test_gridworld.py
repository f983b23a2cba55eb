import numpy as np
import pytest

from rlsf.envs.gridworld import GridworldEnv, GridworldSpec, benchmark_5x5, gridworld_build
from rlsf.tabular import discounted_value, hard_constrained_optimum, value_iteration
from rlsf.types import ValidationError


def spec_2x2(**overrides):
    kwargs = dict(width=2, height=2, unsafe_cells=frozenset(), goal_cell=(1, 1),
                  start_cell=(0, 0), slip_prob=0.0, gamma=0.9, c_max=0.0, horizon=10)
    kwargs.update(overrides)
    return GridworldSpec(**kwargs)


class TestBuild:
    def test_2x2_no_slip_is_row_stochastic(self):
        cmdp = gridworld_build(spec_2x2())
        assert cmdp.n_states == 5  # 4 cells + absorbing sink
        np.testing.assert_allclose(cmdp.P.sum(axis=2), 1.0, atol=1e-12)

    def test_slip_mass_split(self):
        cmdp = gridworld_build(spec_2x2(width=3, height=3, goal_cell=(2, 2), slip_prob=0.1))
        spec = spec_2x2(width=3, height=3, goal_cell=(2, 2), slip_prob=0.1)
        # from the center cell, moving up: 0.9 up, 0.05 left, 0.05 right
        center = spec.cell_index((1, 1))
        row = cmdp.P[center, 0]
        assert row[spec.cell_index((1, 2))] == pytest.approx(0.9)
        assert row[spec.cell_index((0, 1))] == pytest.approx(0.05)
        assert row[spec.cell_index((2, 1))] == pytest.approx(0.05)

    def test_row_sums_for_many_slip_values(self):
        for slip in (0.0, 0.05, 0.3, 0.77, 0.99):
            cmdp = gridworld_build(spec_2x2(width=4, height=3, goal_cell=(3, 2), slip_prob=slip))
            np.testing.assert_allclose(cmdp.P.sum(axis=2), 1.0, atol=1e-12)

    def test_goal_inside_unsafe_rejected(self):
        with pytest.raises(ValidationError):
            spec_2x2(unsafe_cells=frozenset({(1, 1)}))

    def test_unreachable_goal_warns(self):
        # 2-wide corridor fully walled by unsafe cells is still *reachable*
        # (unsafe != impassable); unreachability needs grid clamping geometry,
        # so instead make the goal the start-adjacent cell but start at it: use
        # a degenerate spec where reachability holds; the warning path is
        # covered by monkeypatching the BFS.
        import rlsf.envs.gridworld as gw

        spec = spec_2x2()
        original = gw._goal_reachable
        gw._goal_reachable = lambda s: False
        try:
            with pytest.warns(UserWarning, match="unreachable"):
                gridworld_build(spec)
        finally:
            gw._goal_reachable = original

    def test_unsafe_cells_cost_one(self):
        spec = spec_2x2(width=3, height=3, goal_cell=(2, 2), unsafe_cells=frozenset({(1, 1)}))
        cmdp = gridworld_build(spec)
        idx = spec.cell_index((1, 1))
        np.testing.assert_array_equal(cmdp.c_gt[idx], np.ones(4))
        assert cmdp.c_gt.sum() == 4.0

    def test_benchmark_5x5_detour(self):
        """Unconstrained optimum crosses the unsafe wall; constrained detours."""
        cmdp = gridworld_build(benchmark_5x5())
        uncon_ret, uncon_pol = value_iteration(cmdp)
        con_ret, con_pol = hard_constrained_optimum(cmdp)
        assert discounted_value(cmdp, uncon_pol, cmdp.c_gt) > 0.0
        assert discounted_value(cmdp, con_pol, cmdp.c_gt) == pytest.approx(0.0, abs=1e-12)
        assert uncon_ret > con_ret


class TestEnv:
    def test_same_seed_same_trajectory(self):
        env = GridworldEnv(benchmark_5x5())
        rng = np.random.default_rng(0)
        actions = rng.integers(0, 4, size=30)

        def rollout():
            obs = [env.reset(seed=123)]
            rewards = []
            for a in actions:
                step = env.step(int(a))
                obs.append(step.next_obs)
                rewards.append(step.reward)
                if step.done:
                    break
            return np.array(obs[:-1]), np.array(rewards)

        o1, r1 = rollout()
        o2, r2 = rollout()
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(r1, r2)

    def test_gt_cost_matches_table(self):
        spec = spec_2x2(width=3, height=3, goal_cell=(2, 2), unsafe_cells=frozenset({(0, 1)}))
        env = GridworldEnv(spec)
        env.reset(seed=5)
        # move up into the unsafe cell, then act from it
        step = env.step(0)
        assert step.gt_cost == 0  # cost attaches to the state acted from
        step2 = env.step(0)
        assert step2.gt_cost == 1

    def test_goal_gives_reward_and_done(self):
        env = GridworldEnv(spec_2x2())
        env.reset(seed=1)
        env.step(0)  # (0,0) -> (0,1)
        step = env.step(3)  # (0,1) -> (1,1) goal
        assert step.reward == 10.0
        assert step.done
        assert env.episode_terminated

    def test_horizon_truncation(self):
        env = GridworldEnv(spec_2x2(horizon=3))
        env.reset(seed=1)
        done = False
        n = 0
        while not done:
            done = env.step(1).done  # keep bumping the bottom wall
            n += 1
        assert n == 3
        assert not env.episode_terminated

    def test_telemetry_padding(self):
        spec = spec_2x2(telemetry_dims=3)
        env = GridworldEnv(spec)
        obs = env.reset(seed=0)
        assert obs.shape == (4 + 3,)
        assert env.task_feature_indices == [0, 1, 2, 3]
        step = env.step(0)
        # previous-move telemetry occupies the first two padded slots
        assert step.next_obs.shape == (7,)
        np.testing.assert_array_equal(step.next_obs[4:6], [0.0, 1.0])
