import copy

import numpy as np
import pytest

from rlsf.envs.driver import DriverConfig, DriverEnv
from rlsf.envs.gridworld import GridworldEnv, GridworldSpec
from rlsf.nets import finite_difference_grad
from rlsf.trainer import (
    Critic,
    DiscretePolicy,
    GaussianPolicy,
    LagrangeState,
    PPOConfig,
    build_agent,
    collect_rollouts,
    evaluate_policy,
    gae,
    ppo_lagrangian_update,
)
from rlsf.types import ValidationError


def small_gridworld():
    return GridworldEnv(GridworldSpec(width=3, height=3, unsafe_cells=frozenset({(1, 1)}),
                                      goal_cell=(2, 2), start_cell=(0, 0), slip_prob=0.0,
                                      gamma=0.95, c_max=0.0, horizon=15))


class TestGae:
    def brute_force(self, rewards, values, bootstrap, gamma, lam):
        """Independent oracle: explicit double sum over the GAE definition."""
        T = len(rewards)
        vs = np.append(values, bootstrap)
        deltas = np.array([rewards[t] + gamma * vs[t + 1] - vs[t] for t in range(T)])
        adv = np.array([
            sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, T))
            for t in range(T)
        ])
        return adv

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            T = int(rng.integers(1, 30))
            rewards = rng.standard_normal(T)
            values = rng.standard_normal(T)
            bootstrap = float(rng.standard_normal())
            gamma, lam = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.5, 1.0))
            adv, ret = gae(rewards, values, bootstrap, gamma, lam)
            np.testing.assert_allclose(adv, self.brute_force(rewards, values, bootstrap, gamma, lam),
                                       atol=1e-10)
            np.testing.assert_allclose(ret, adv + values, atol=1e-12)

    def test_lambda_one_gives_discounted_return_minus_value(self):
        rng = np.random.default_rng(1)
        rewards = rng.standard_normal(10)
        values = rng.standard_normal(10)
        adv, _ = gae(rewards, values, 0.0, gamma=0.9, lam=1.0)
        returns = np.array([sum(0.9 ** (k - t) * rewards[k] for k in range(t, 10)) for t in range(10)])
        np.testing.assert_allclose(adv, returns - values, atol=1e-10)


class TestLagrange:
    def test_never_negative(self):
        lag = LagrangeState(value=0.1, lr=1.0)
        lag.update(cost_estimate=0.0, c_max=5.0)
        assert lag.value == 0.0
        with pytest.raises(ValidationError):
            LagrangeState(value=-0.5)

    def test_update_direction_follows_residual(self):
        lag = LagrangeState(value=1.0, lr=0.1)
        lag.update(cost_estimate=2.0, c_max=1.0)
        assert lag.value == pytest.approx(1.1)
        lag.update(cost_estimate=0.0, c_max=1.0)
        assert lag.value == pytest.approx(1.0)


class TestCollectRollouts:
    def test_deterministic_given_rng_state(self):
        env = small_gridworld()
        rng1 = np.random.default_rng(3)
        policy = DiscretePolicy(env.obs_dim, env.n_actions, [16], np.random.default_rng(0))
        eps1 = collect_rollouts(policy, env, 100, rng1, id_prefix="a")
        eps2 = collect_rollouts(policy, small_gridworld(), 100, np.random.default_rng(3), id_prefix="a")
        assert len(eps1) == len(eps2)
        for e1, e2 in zip(eps1, eps2):
            np.testing.assert_array_equal(e1.traj.states(), e2.traj.states())
            np.testing.assert_array_equal(e1.gt_costs, e2.gt_costs)
            np.testing.assert_array_equal(e1.logps, e2.logps)

    def test_step_budget_within_one_episode(self):
        env = small_gridworld()
        policy = DiscretePolicy(env.obs_dim, env.n_actions, [16], np.random.default_rng(0))
        eps = collect_rollouts(policy, env, 50, np.random.default_rng(1))
        total = sum(len(e) for e in eps)
        assert 50 <= total < 50 + env.spec.horizon

    def test_driver_reward_double_entry(self):
        """Episode reward sum matches an independent replay of the same
        actions through a freshly seeded world."""
        env = DriverEnv(DriverConfig(scenario="lane_change", horizon=30))
        policy = GaussianPolicy(env.obs_dim, env.action_dim, [16], np.random.default_rng(2),
                                action_scale=0.2)
        eps = collect_rollouts(policy, env, 30, np.random.default_rng(9))
        ep = eps[0]
        replay_env = DriverEnv(DriverConfig(scenario="lane_change", horizon=30))
        replay_env.reset(seed=ep.traj.env_seed)
        total = 0.0
        for tr in ep.traj.transitions:
            total += replay_env.step(tr.action).reward
        assert total == pytest.approx(ep.traj.rewards().sum(), abs=1e-12)


class TestPPOLagrangian:
    def make_batch(self, env, policy, rng, n_steps=120):
        eps = collect_rollouts(policy, env, n_steps, rng)
        for ep in eps:
            ep.inferred_costs = ep.gt_costs.astype(np.float64)
        return eps

    def test_lambda_zero_reduces_to_plain_ppo(self):
        """With the multiplier pinned at zero, cost signals must not touch
        the policy parameters."""
        env = small_gridworld()
        rng_init = np.random.default_rng(7)
        nets_a = build_agent(env, [16], [16], 3e-4, 1e-3, rng_init)
        nets_b = copy.deepcopy(nets_a)

        rng_roll = np.random.default_rng(11)
        batch_a = self.make_batch(env, nets_a.policy, rng_roll)
        batch_b = copy.deepcopy(batch_a)
        for ep in batch_b:
            ep.inferred_costs = np.zeros(len(ep))  # wipe the costs entirely

        cfg = PPOConfig(epochs=4, minibatch_size=64, gamma=0.95)
        ppo_lagrangian_update(batch_a, nets_a, LagrangeState(0.0, lr=0.0), 10.0, cfg,
                              np.random.default_rng(5))
        ppo_lagrangian_update(batch_b, nets_b, LagrangeState(0.0, lr=0.0), 10.0, cfg,
                              np.random.default_rng(5))
        np.testing.assert_array_equal(nets_a.policy.net.get_flat(), nets_b.policy.net.get_flat())

    def test_lambda_moves_with_constraint_residual(self):
        env = small_gridworld()
        nets = build_agent(env, [16], [16], 3e-4, 1e-3, np.random.default_rng(0))
        batch = self.make_batch(env, nets.policy, np.random.default_rng(1))
        for ep in batch:
            ep.inferred_costs = np.ones(len(ep))  # cost 1 per step, far above c_max
        lag = LagrangeState(0.5, lr=0.1)
        cfg = PPOConfig(epochs=1, minibatch_size=64, gamma=0.95)
        stats = ppo_lagrangian_update(batch, nets, lag, c_max=0.0, cfg=cfg,
                                      rng=np.random.default_rng(2))
        assert lag.value > 0.5
        assert stats["cost_estimate"] > 0.0

        lag2 = LagrangeState(0.5, lr=0.1)
        for ep in batch:
            ep.inferred_costs = np.zeros(len(ep))
        ppo_lagrangian_update(batch, nets, lag2, c_max=1.0, cfg=cfg, rng=np.random.default_rng(2))
        assert lag2.value == pytest.approx(0.4)

    def test_missing_costs_rejected(self):
        env = small_gridworld()
        nets = build_agent(env, [16], [16], 3e-4, 1e-3, np.random.default_rng(0))
        eps = collect_rollouts(nets.policy, env, 60, np.random.default_rng(1))
        with pytest.raises(ValidationError):
            ppo_lagrangian_update(eps, nets, LagrangeState(), 0.0, PPOConfig(epochs=1),
                                  np.random.default_rng(2))

    def test_plain_ppo_learns_small_gridworld(self):
        """Sanity: reward-only PPO reaches the goal on an unconstrained grid."""
        env = GridworldEnv(GridworldSpec(width=3, height=3, unsafe_cells=frozenset(),
                                         goal_cell=(2, 2), start_cell=(0, 0), slip_prob=0.0,
                                         gamma=0.95, c_max=0.0, horizon=12))
        nets = build_agent(env, [32], [32], 1e-3, 3e-3, np.random.default_rng(0))
        lag = LagrangeState(0.0, lr=0.0)
        cfg = PPOConfig(epochs=10, minibatch_size=128, gamma=0.95, entropy_coef=0.01)
        rng = np.random.default_rng(1)
        for _ in range(12):
            batch = self.make_batch(env, nets.policy, rng, n_steps=400)
            ppo_lagrangian_update(batch, nets, lag, c_max=10.0, cfg=cfg, rng=rng)
        result = evaluate_policy(nets.policy, env, n_episodes=20, seed=77)
        assert result["return_mean"] > 0.0  # reaches the goal most of the time


class TestGaussianPolicy:
    def test_log_prob_consistency(self):
        rng = np.random.default_rng(4)
        policy = GaussianPolicy(3, 2, [8], rng)
        obs = rng.standard_normal(3)
        action, u, logp = policy.act(obs, rng)
        assert np.all(np.abs(action) <= 1.0)
        recomputed = policy.log_prob(obs[None, :], u[None, :])[0]
        assert recomputed == pytest.approx(logp, abs=1e-12)

    def test_deterministic_mode_returns_tanh_mean(self):
        rng = np.random.default_rng(5)
        policy = GaussianPolicy(3, 2, [8], rng, action_scale=0.5)
        obs = rng.standard_normal(3)
        action, u, _ = policy.act(obs, rng, deterministic=True)
        mean = policy.net(obs[None, :])[0]
        np.testing.assert_allclose(action, np.tanh(mean) * 0.5, atol=1e-12)

    def test_policy_gradient_matches_finite_differences(self):
        """The -(coeffs * logp) objective gradient, checked by central
        differences through the full squashed-Gaussian parameterization."""
        rng = np.random.default_rng(6)
        policy = GaussianPolicy(2, 2, [4], rng)
        obs = rng.standard_normal((6, 2))
        u = rng.standard_normal((6, 2))
        coeffs = rng.standard_normal(6)

        analytic, _ = policy.policy_grad(obs, u, coeffs)

        def objective(flat):
            saved = policy.get_flat()
            policy.set_flat(flat)
            val = -float((coeffs * policy.log_prob(obs, u)).sum())
            policy.set_flat(saved)
            return val

        fd = finite_difference_grad(objective, policy.get_flat())
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-4


class TestDiscretePolicyGrad:
    def test_matches_finite_differences_with_entropy(self):
        rng = np.random.default_rng(8)
        policy = DiscretePolicy(3, 4, [5], rng)
        obs = rng.standard_normal((7, 3))
        actions = rng.integers(0, 4, 7).astype(float)
        coeffs = rng.standard_normal(7)
        ent_coef = 0.05

        analytic, _ = policy.policy_grad(obs, actions, coeffs, entropy_coef=ent_coef)

        def objective(flat):
            saved = policy.net.get_flat()
            policy.net.set_flat(flat)
            logp_all = policy._log_softmax(policy.net(obs))
            p = np.exp(logp_all)
            ent = -(p * logp_all).sum(axis=1).mean()
            logp = logp_all[np.arange(7), actions.astype(int)]
            val = -float((coeffs * logp).sum()) - ent_coef * float(ent)
            policy.net.set_flat(saved)
            return val

        fd = finite_difference_grad(objective, policy.net.get_flat())
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-4


class TestCriticGradients:
    def test_both_critics_match_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(3):
            critic = Critic(3, [6], rng)
            X = rng.standard_normal((8, 3))
            t = rng.standard_normal(8)
            _, analytic = critic.loss_and_grad(X, t)

            def objective(flat, critic=critic, X=X, t=t):
                saved = critic.net.get_flat()
                critic.net.set_flat(flat)
                loss, _ = critic.loss_and_grad(X, t)
                critic.net.set_flat(saved)
                return loss

            fd = finite_difference_grad(objective, critic.net.get_flat())
            rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4
