"""Exact tabular computations: discounted values, occupancy measures, and
the enumeration / dynamic-programming / Monte-Carlo oracles used by the
proposition test suites.

All solvers are deterministic linear-algebra routines; sampling appears only
in the explicitly-named Monte-Carlo oracles.
"""

from __future__ import annotations

import itertools

import numpy as np

from .types import TabularCMDP, UnsupportedError, ValidationError

POLICY_ATOL = 1e-8


def _check_policy(cmdp: TabularCMDP, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (cmdp.n_states, cmdp.n_actions):
        raise ValidationError(
            f"policy must have shape {(cmdp.n_states, cmdp.n_actions)}, got {policy.shape}"
        )
    if np.any(policy < -POLICY_ATOL) or not np.allclose(
        policy.sum(axis=1), 1.0, atol=POLICY_ATOL, rtol=0.0
    ):
        raise ValidationError("policy rows must be probability distributions")
    return policy


def transition_matrix(cmdp: TabularCMDP, policy: np.ndarray) -> np.ndarray:
    """State-to-state transition matrix P_pi[s, s'] under the policy."""
    return np.einsum("sa,sap->sp", policy, cmdp.P)


def discounted_value(cmdp: TabularCMDP, policy: np.ndarray, f: np.ndarray) -> float:
    """J^f(pi) = E[sum_t gamma^t f(s_t, a_t)], by exact linear solve.

    Solves the Bellman evaluation system V = f_pi + gamma * P_pi V and takes
    the initial-distribution average. No sampling.
    """
    policy = _check_policy(cmdp, policy)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (cmdp.n_states, cmdp.n_actions):
        raise ValidationError("f must be a per-(s,a) table")
    if cmdp.gamma >= 1.0:
        raise UnsupportedError("gamma = 1 is unsupported for infinite-horizon values")
    P_pi = transition_matrix(cmdp, policy)
    f_pi = np.einsum("sa,sa->s", policy, f)
    V = np.linalg.solve(np.eye(cmdp.n_states) - cmdp.gamma * P_pi, f_pi)
    return float(cmdp.mu @ V)


def occupancy_measure(cmdp: TabularCMDP, policy: np.ndarray) -> np.ndarray:
    """rho(s, a) = E[sum_t gamma^t 1[(s_t, a_t) = (s, a)]].

    Solves the dual (flow) system d = mu + gamma * P_pi^T d, the transpose of
    the system used by :func:`discounted_value`; agreement of the two routes
    is a tested invariant, not a construction.
    """
    policy = _check_policy(cmdp, policy)
    if cmdp.gamma >= 1.0:
        raise UnsupportedError("gamma = 1 occupancy is unsupported for non-episodic MDPs")
    P_pi = transition_matrix(cmdp, policy)
    d = np.linalg.solve(np.eye(cmdp.n_states) - cmdp.gamma * P_pi.T, cmdp.mu)
    return d[:, None] * policy


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def monte_carlo_value(
    cmdp: TabularCMDP,
    policy: np.ndarray,
    f: np.ndarray,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Sampled estimate of J^f(pi) with its standard error.

    Vectorized over rollouts; the horizon truncates the discounted tail and
    should be long enough that gamma**horizon is negligible.
    """
    policy = _check_policy(cmdp, policy)
    S, A = cmdp.n_states, cmdp.n_actions
    pol_cdf = np.cumsum(policy, axis=1)
    trans_cdf = np.cumsum(cmdp.P, axis=2)

    states = rng.choice(S, size=n_rollouts, p=cmdp.mu)
    totals = np.zeros(n_rollouts)
    disc = 1.0
    for _ in range(horizon):
        u = rng.random(n_rollouts)
        actions = (pol_cdf[states] < u[:, None]).sum(axis=1)
        totals += disc * f[states, actions]
        u2 = rng.random(n_rollouts)
        states = (trans_cdf[states, actions] < u2[:, None]).sum(axis=1)
        disc *= cmdp.gamma
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n_rollouts))


def monte_carlo_occupancy(
    cmdp: TabularCMDP,
    policy: np.ndarray,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Empirical discounted visit frequencies, with per-cell standard errors."""
    policy = _check_policy(cmdp, policy)
    S, A = cmdp.n_states, cmdp.n_actions
    pol_cdf = np.cumsum(policy, axis=1)
    trans_cdf = np.cumsum(cmdp.P, axis=2)

    states = rng.choice(S, size=n_rollouts, p=cmdp.mu)
    counts = np.zeros((n_rollouts, S * A))
    disc = 1.0
    for _ in range(horizon):
        u = rng.random(n_rollouts)
        actions = (pol_cdf[states] < u[:, None]).sum(axis=1)
        np.add.at(counts, (np.arange(n_rollouts), states * A + actions), disc)
        u2 = rng.random(n_rollouts)
        states = (trans_cdf[states, actions] < u2[:, None]).sum(axis=1)
        disc *= cmdp.gamma
    mean = counts.mean(axis=0).reshape(S, A)
    se = (counts.std(axis=0, ddof=1) / np.sqrt(n_rollouts)).reshape(S, A)
    return mean, se


def value_iteration(
    cmdp: TabularCMDP,
    allowed: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[float, np.ndarray]:
    """Optimal discounted return and a greedy deterministic policy.

    ``allowed`` is an optional boolean (S, A) mask restricting the action set
    (used for hard-constraint solves); forbidden actions get value -inf, and
    a state with no allowed action is treated as all-actions-forbidden-to
    -enter by its predecessors.
    """
    S, A = cmdp.n_states, cmdp.n_actions
    if allowed is None:
        allowed = np.ones((S, A), dtype=bool)
    V = np.zeros(S)
    for _ in range(max_iter):
        Q = cmdp.r + cmdp.gamma * np.einsum("sap,p->sa", cmdp.P, V)
        Q = np.where(allowed, Q, -np.inf)
        V_new = Q.max(axis=1)
        V_new = np.where(np.isfinite(V_new), V_new, np.float64(-1e18))
        if np.max(np.abs(V_new - V)) <= tol:
            V = V_new
            break
        V = V_new
    Q = cmdp.r + cmdp.gamma * np.einsum("sap,p->sa", cmdp.P, V)
    Q = np.where(allowed, Q, -np.inf)
    greedy = Q.argmax(axis=1)
    policy = np.zeros((S, A))
    policy[np.arange(S), greedy] = 1.0
    return float(cmdp.mu @ V), policy


def hard_constrained_optimum(cmdp: TabularCMDP) -> tuple[float, np.ndarray]:
    """Best return over policies with exactly zero expected ground-truth cost.

    For c_max = 0 any reachable probability of an unsafe (s, a) is a
    violation, so the feasible set is characterized by a fixed point: an
    action is forbidden if it is unsafe itself or can transition to a state
    whose every action is forbidden. Value iteration on the surviving actions
    is then the exact constrained optimum over all policies (deterministic or
    stochastic), which stands in for brute-force policy enumeration at sizes
    where enumeration is intractable.
    """
    S, A = cmdp.n_states, cmdp.n_actions
    allowed = cmdp.c_gt == 0
    while True:
        dead = ~allowed.any(axis=1)  # states with no safe action at all
        reaches_dead = (cmdp.P[:, :, dead].sum(axis=2) > 0.0) & allowed
        if not reaches_dead.any():
            break
        allowed = allowed & ~reaches_dead
    if not allowed[cmdp.mu > 0].any(axis=1).all():
        raise ValidationError("no zero-cost policy exists from the initial distribution")
    return value_iteration(cmdp, allowed=allowed)


def enumerate_deterministic_policies(cmdp: TabularCMDP):
    """Yield every deterministic policy table. Exponential; small MDPs only."""
    S, A = cmdp.n_states, cmdp.n_actions
    for choice in itertools.product(range(A), repeat=S):
        policy = np.zeros((S, A))
        policy[np.arange(S), choice] = 1.0
        yield policy


def brute_force_constrained_optimum(cmdp: TabularCMDP) -> tuple[float, np.ndarray]:
    """Exhaustive search over deterministic policies for the constrained optimum.

    Only feasible for very small state/action spaces; used to validate
    :func:`hard_constrained_optimum` and soft-constraint oracles.
    """
    best_ret, best_pol = -np.inf, None
    for policy in enumerate_deterministic_policies(cmdp):
        cost = discounted_value(cmdp, policy, cmdp.c_gt)
        if cost <= cmdp.c_max + 1e-10:
            ret = discounted_value(cmdp, policy, cmdp.r)
            if ret > best_ret:
                best_ret, best_pol = ret, policy
    if best_pol is None:
        raise ValidationError("no feasible deterministic policy exists")
    return float(best_ret), best_pol


def random_cmdp(
    rng: np.random.Generator,
    n_states: int = 5,
    n_actions: int = 3,
    gamma: float = 0.9,
    unsafe_fraction: float = 0.3,
    c_max: float = 0.5,
) -> TabularCMDP:
    """Dirichlet-random CMDP with a random binary ground-truth cost table."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    c_gt = (rng.random((n_states, n_actions)) < unsafe_fraction).astype(np.float64)
    mu = rng.dirichlet(np.ones(n_states))
    return TabularCMDP(P=P, r=r, c_gt=c_gt, mu=mu, gamma=gamma, c_max=c_max)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)
