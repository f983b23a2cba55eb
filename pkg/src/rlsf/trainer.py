"""On-policy optimization: actor/critic networks, generalized advantage
estimation, and the PPO update with a Lagrangian cost penalty.

The policy objective is the clipped surrogate on the combined advantage
A_r - lambda * A_c; the multiplier is projected to stay non-negative and
moves once per round in the direction of the constraint residual
(J_c_hat - c_max), with J_c_hat the undiscounted per-episode mean cost of
the round's batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nets import MLP, Adam
from .types import Trajectory, Transition, ValidationError

LOG_STD_INIT = -0.5
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns NaN; carries a diagnostic payload."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class LagrangeState:
    """Non-negative multiplier with projected gradient-ascent updates."""

    value: float = 0.0
    lr: float = 0.01

    def __post_init__(self):
        if self.value < 0.0:
            raise ValidationError("lambda must be non-negative")

    def update(self, cost_estimate: float, c_max: float) -> float:
        self.value = max(0.0, self.value + self.lr * (cost_estimate - c_max))
        return self.value


class DiscretePolicy:
    """Categorical policy over softmax logits."""

    is_discrete = True

    def __init__(self, obs_dim: int, n_actions: int, hidden: list[int], rng: np.random.Generator):
        self.n_actions = n_actions
        self.net = MLP(obs_dim, hidden, n_actions, rng)

    def _log_softmax(self, logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        logits = self.net(obs[None, :])
        logp = self._log_softmax(logits)[0]
        if deterministic:
            a = int(np.argmax(logp))
        else:
            a = int(rng.choice(self.n_actions, p=np.exp(logp)))
        return a, float(logp[a])

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        logp = self._log_softmax(self.net(obs))
        return logp[np.arange(len(actions)), actions.astype(int)]

    def policy_grad(self, obs: np.ndarray, actions: np.ndarray, coeffs: np.ndarray,
                    entropy_coef: float = 0.0) -> tuple[np.ndarray, float]:
        """Flat gradient of -(coeffs * log pi(a|s)).sum() - entropy_coef * H.

        ``coeffs`` are per-sample weights (the active-branch PPO ratio-advantage
        terms divided by batch size), precomputed by the caller.
        """
        logits, cache = self.net.forward(obs)
        logp = self._log_softmax(logits)
        p = np.exp(logp)
        acts = actions.astype(int)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(acts)), acts] = 1.0
        dlogits = -coeffs[:, None] * (onehot - p)
        ent = -(p * logp).sum(axis=1)
        if entropy_coef != 0.0:
            dH = -p * (logp + ent[:, None])
            dlogits -= entropy_coef * dH / len(obs)
        return self.net.backward(cache, dlogits), float(ent.mean())


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian for continuous control.

    The pre-squash sample u is stored in the rollout so the PPO ratio uses
    the exact Gaussian log density; the tanh Jacobian term is parameter-free
    and cancels in the ratio.
    """

    is_discrete = False

    def __init__(self, obs_dim: int, action_dim: int, hidden: list[int],
                 rng: np.random.Generator, action_scale: float = 1.0):
        self.action_dim = action_dim
        self.action_scale = action_scale
        self.net = MLP(obs_dim, hidden, action_dim, rng)
        self.log_std = np.full(action_dim, LOG_STD_INIT)

    @property
    def n_params(self) -> int:
        return self.net.n_params + self.action_dim

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.net.get_flat(), self.log_std])

    def set_flat(self, flat: np.ndarray) -> None:
        self.net.set_flat(flat[: self.net.n_params])
        self.log_std = flat[self.net.n_params :].copy()

    def act(self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        mean = self.net(obs[None, :])[0]
        std = np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))
        u = mean if deterministic else mean + std * rng.standard_normal(self.action_dim)
        action = np.tanh(u) * self.action_scale
        return action, u, float(self._gauss_logp(u[None, :], mean[None, :], std)[0])

    def _gauss_logp(self, u: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
        z = (u - mean) / std
        return (-0.5 * z**2 - np.log(std) - 0.5 * math.log(2.0 * math.pi)).sum(axis=1)

    def log_prob(self, obs: np.ndarray, u: np.ndarray) -> np.ndarray:
        mean = self.net(obs)
        std = np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))
        return self._gauss_logp(u, mean, std)

    def policy_grad(self, obs: np.ndarray, u: np.ndarray, coeffs: np.ndarray,
                    entropy_coef: float = 0.0) -> tuple[np.ndarray, float]:
        mean, cache = self.net.forward(obs)
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        z = (u - mean) / std
        # d logp / d mean = z / std ; d logp / d log_std = z^2 - 1
        dmean = -coeffs[:, None] * (z / std)
        dlogstd = -(coeffs[:, None] * (z**2 - 1.0)).sum(axis=0)
        ent = float((log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))).sum())
        if entropy_coef != 0.0:
            dlogstd -= entropy_coef * np.ones(self.action_dim)
        return np.concatenate([self.net.backward(cache, dmean), dlogstd]), ent


class Critic:
    """Scalar value head trained by MSE regression on discounted targets."""

    def __init__(self, obs_dim: int, hidden: list[int], rng: np.random.Generator):
        self.net = MLP(obs_dim, hidden, 1, rng)

    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.net(np.atleast_2d(obs))[:, 0]

    def loss_and_grad(self, obs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        out, cache = self.net.forward(obs)
        err = out[:, 0] - targets
        loss = float(np.mean(err**2))
        grad = self.net.backward(cache, (2.0 * err / len(err))[:, None])
        return loss, grad


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass
class RolloutEpisode:
    """One episode plus the side-channel data the learner must not see."""

    traj: Trajectory
    gt_costs: np.ndarray
    final_obs: np.ndarray
    terminated: bool  # True: env termination, False: horizon truncation
    raw_actions: np.ndarray | None = None  # pre-squash samples (continuous)
    logps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inferred_costs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.traj)


def collect_rollouts(policy, env, n_steps: int, rng: np.random.Generator,
                     policy_version: int = 0, id_prefix: str = "") -> list[RolloutEpisode]:
    """Roll complete episodes until at least n_steps env steps are gathered.

    Episode seeds and action sampling both derive from ``rng``, so a given
    generator state reproduces the batch exactly. Ground-truth costs are
    collected into the side channel only.
    """
    episodes: list[RolloutEpisode] = []
    steps = 0
    ep_index = 0
    while steps < n_steps:
        env_seed = int(rng.integers(0, 2**31 - 1))
        obs = env.reset(seed=env_seed)
        transitions: list[Transition] = []
        gt_costs, logps, raw_actions = [], [], []
        done = False
        t = 0
        while not done:
            if policy.is_discrete:
                a, logp = policy.act(obs, rng)
                action_rec: np.ndarray | float = float(a)
                step = env.step(a)
            else:
                a, u, logp = policy.act(obs, rng)
                raw_actions.append(u)
                action_rec = a
                step = env.step(a)
            transitions.append(Transition(t=t, state=obs, action=np.atleast_1d(action_rec),
                                          reward=step.reward, done=step.done))
            gt_costs.append(step.gt_cost)
            logps.append(logp)
            obs = step.next_obs
            done = step.done
            t += 1
        # distinguish true termination (bootstrap 0) from horizon truncation
        terminated = env.episode_terminated
        traj = Trajectory(transitions, env_seed=env_seed, policy_version=policy_version,
                          traj_id=f"{id_prefix}e{ep_index:04d}")
        episodes.append(RolloutEpisode(
            traj=traj,
            gt_costs=np.array(gt_costs, dtype=np.float64),
            final_obs=obs,
            terminated=terminated,
            raw_actions=np.stack(raw_actions) if raw_actions else None,
            logps=np.array(logps, dtype=np.float64),
        ))
        steps += t
        ep_index += 1
    return episodes


def gae(rewards: np.ndarray, values: np.ndarray, bootstrap: float,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation for one episode.

    Returns (advantages, return targets); ``bootstrap`` is the value of the
    state after the last transition (0 for true termination).
    """
    T = len(rewards)
    adv = np.zeros(T)
    next_value = bootstrap
    running = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# PPO-Lagrangian
# ---------------------------------------------------------------------------


@dataclass
class PPOConfig:
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    epochs: int = 40
    minibatch_size: int = 256
    entropy_coef: float = 0.0
    normalize_advantages: bool = True
    gamma: float = 0.99


@dataclass
class AgentNets:
    policy: object
    v_critic: Critic
    c_critic: Critic
    policy_opt: Adam
    v_opt: Adam
    c_opt: Adam


def build_agent(env, policy_hidden, critic_hidden, policy_lr, critic_lr,
                rng: np.random.Generator, action_scale: float = 1.0) -> AgentNets:
    obs_dim = env.obs_dim
    if env.is_discrete:
        policy = DiscretePolicy(obs_dim, env.n_actions, list(policy_hidden), rng)
        n_pol = policy.net.n_params
    else:
        policy = GaussianPolicy(obs_dim, env.action_dim, list(policy_hidden), rng,
                                action_scale=action_scale)
        n_pol = policy.n_params
    v_critic = Critic(obs_dim, list(critic_hidden), rng)
    c_critic = Critic(obs_dim, list(critic_hidden), rng)
    return AgentNets(
        policy=policy,
        v_critic=v_critic,
        c_critic=c_critic,
        policy_opt=Adam(n_pol, lr=policy_lr),
        v_opt=Adam(v_critic.net.n_params, lr=critic_lr),
        c_opt=Adam(c_critic.net.n_params, lr=critic_lr),
    )


def _policy_params(policy) -> np.ndarray:
    return policy.get_flat() if isinstance(policy, GaussianPolicy) else policy.net.get_flat()


def _set_policy_params(policy, flat: np.ndarray) -> None:
    if isinstance(policy, GaussianPolicy):
        policy.set_flat(flat)
    else:
        policy.net.set_flat(flat)


def ppo_lagrangian_update(episodes: list[RolloutEpisode], nets: AgentNets,
                          lagrange: LagrangeState, c_max: float, cfg: PPOConfig,
                          rng: np.random.Generator) -> dict:
    """One round of PPO-Lagrangian on episodes carrying inferred costs.

    Updates lambda once from the batch's undiscounted per-episode mean cost,
    then runs clipped-surrogate epochs on A_r - lambda * A_c and regresses
    both critics on their discounted returns.
    """
    for ep in episodes:
        if ep.inferred_costs is None:
            raise ValidationError("episodes must carry inferred costs before the update")

    obs = np.concatenate([ep.traj.states() for ep in episodes])
    if nets.policy.is_discrete:
        act = np.concatenate([ep.traj.actions()[:, 0] for ep in episodes])
    else:
        act = np.concatenate([ep.raw_actions for ep in episodes])
    logp_old = np.concatenate([ep.logps for ep in episodes])

    adv_r_parts, adv_c_parts, ret_r_parts, ret_c_parts = [], [], [], []
    for ep in episodes:
        values = nets.v_critic.value(ep.traj.states())
        cvalues = nets.c_critic.value(ep.traj.states())
        boot_v = 0.0 if ep.terminated else float(nets.v_critic.value(ep.final_obs[None, :])[0])
        boot_c = 0.0 if ep.terminated else float(nets.c_critic.value(ep.final_obs[None, :])[0])
        a_r, ret_r = gae(ep.traj.rewards(), values, boot_v, cfg.gamma, cfg.gae_lambda)
        a_c, ret_c = gae(ep.inferred_costs, cvalues, boot_c, cfg.gamma, cfg.gae_lambda)
        adv_r_parts.append(a_r)
        adv_c_parts.append(a_c)
        ret_r_parts.append(ret_r)
        ret_c_parts.append(ret_c)
    adv_r = np.concatenate(adv_r_parts)
    adv_c = np.concatenate(adv_c_parts)
    ret_r = np.concatenate(ret_r_parts)
    ret_c = np.concatenate(ret_c_parts)

    cost_estimate = float(np.mean([ep.inferred_costs.sum() for ep in episodes]))
    lagrange.update(cost_estimate, c_max)

    adv = adv_r - lagrange.value * adv_c
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = len(obs)
    pol_params = _policy_params(nets.policy)
    v_params = nets.v_critic.net.get_flat()
    c_params = nets.c_critic.net.get_flat()
    stats = {"policy_loss": 0.0, "v_loss": 0.0, "c_loss": 0.0, "entropy": 0.0}
    n_updates = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            mb_obs, mb_act, mb_adv = obs[idx], act[idx], adv[idx]
            logp_new = nets.policy.log_prob(mb_obs, mb_act)
            ratio = np.exp(logp_new - logp_old[idx])
            unclipped = ratio * mb_adv
            clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * mb_adv
            # gradient flows through the ratio only where the unclipped branch
            # is the active minimum
            active = unclipped <= clipped
            coeffs = np.where(active, ratio * mb_adv, 0.0) / len(idx)
            pol_loss = -float(np.minimum(unclipped, clipped).mean())
            grad, entropy = nets.policy.policy_grad(mb_obs, mb_act, coeffs, cfg.entropy_coef)
            if not np.isfinite(pol_loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged("NaN in policy update", {
                    "lambda": lagrange.value, "cost_estimate": cost_estimate,
                    "adv_range": [float(adv.min()), float(adv.max())],
                })
            pol_params = nets.policy_opt.step(pol_params, grad)
            _set_policy_params(nets.policy, pol_params)

            v_loss, v_grad = nets.v_critic.loss_and_grad(mb_obs, ret_r[idx])
            c_loss, c_grad = nets.c_critic.loss_and_grad(mb_obs, ret_c[idx])
            if not (np.isfinite(v_loss) and np.isfinite(c_loss)):
                raise TrainingDiverged("NaN in critic update", {"v_loss": v_loss, "c_loss": c_loss})
            v_params = nets.v_opt.step(v_params, v_grad)
            c_params = nets.c_opt.step(c_params, c_grad)
            nets.v_critic.net.set_flat(v_params)
            nets.c_critic.net.set_flat(c_params)

            stats["policy_loss"] += pol_loss
            stats["v_loss"] += v_loss
            stats["c_loss"] += c_loss
            stats["entropy"] += entropy
            n_updates += 1
    for key in stats:
        stats[key] /= max(n_updates, 1)
    stats["lambda"] = lagrange.value
    stats["cost_estimate"] = cost_estimate
    return stats


def evaluate_policy(policy, env, n_episodes: int, seed: int, deterministic: bool = True) -> dict:
    """Ground-truth evaluation: mean return, episode cost, and CV rate (%)."""
    rng = np.random.default_rng(seed)
    returns, ep_costs, violations, steps = [], [], 0, 0
    for _ in range(n_episodes):
        obs = env.reset(seed=int(rng.integers(0, 2**31 - 1)))
        done = False
        total_r, total_c = 0.0, 0.0
        while not done:
            if policy.is_discrete:
                a, _ = policy.act(obs, rng, deterministic=deterministic)
                step = env.step(a)
            else:
                a, _, _ = policy.act(obs, rng, deterministic=deterministic)
                step = env.step(a)
            total_r += step.reward
            total_c += step.gt_cost
            violations += step.gt_cost
            steps += 1
            obs = step.next_obs
            done = step.done
        returns.append(total_r)
        ep_costs.append(total_c)
    return {
        "return_mean": float(np.mean(returns)),
        "gt_cost_mean": float(np.mean(ep_costs)),
        "cv_rate": 100.0 * violations / max(steps, 1),
        "episodes": n_episodes,
    }
