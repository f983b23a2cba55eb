"""Executable property suites for the theory the cost inference rests on:
the surrogate upper bound, the product inequality behind it, the closed-form
optimum, the overestimation identity and its safety corollary, the
locality-sensitive hashing property, and gradient correctness of every
hand-rolled network.

Each suite returns a machine-readable result with counterexamples on
failure; `cmd_props` serializes them as JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costmodel
from .costmodel import DensityTable, SafetyClassifier, closed_form_estimate, density_loss_grad_logits, estimation_bias
from .nets import Adam, finite_difference_grad, sigmoid
from .sampler import SimHashProjector
from .tabular import discounted_value, random_cmdp, random_policy
from .trainer import Critic


@dataclass
class SuiteResult:
    name: str
    trials: int
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "trials": self.trials,
            "failures": self.failures[:10],
            "n_failures": len(self.failures),
        }


def _random_segment_batch(rng: np.random.Generator, max_len: int = 50):
    n_segments = int(rng.integers(1, 9))
    batch = []
    for _ in range(n_segments):
        length = int(rng.integers(1, max_len + 1))
        probs = rng.uniform(0.0, 1.0, size=length)
        y = int(rng.integers(0, 2))
        batch.append((probs, y))
    return batch


def prop1_upper_bound(seed: int, trials: int = 10_000) -> SuiteResult:
    """Surrogate NLL >= likelihood NLL on randomized segment batches, with
    exact equality for all-safe labels and for segment length 1."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("prop1_surrogate_upper_bound", trials)
    for i in range(trials):
        batch = _random_segment_batch(rng)
        sur = costmodel.surrogate_loss(batch)
        mle = costmodel.mle_loss(batch)
        if not sur >= mle - 1e-9:
            result.failures.append({"trial": i, "surrogate": sur, "mle": mle,
                                    "batch": [(list(p), y) for p, y in batch]})
            continue
        safe_batch = [(p, 1) for p, _ in batch]
        if abs(costmodel.surrogate_loss(safe_batch) - costmodel.mle_loss(safe_batch)) > 1e-12:
            result.failures.append({"trial": i, "case": "all-safe equality"})
            continue
        single = [(np.atleast_1d(p)[:1], y) for p, y in batch]
        if abs(costmodel.surrogate_loss(single) - costmodel.mle_loss(single)) > 1e-12:
            result.failures.append({"trial": i, "case": "length-1 equality"})
    return result


def lemma_product_inequality(seed: int, trials: int = 10_000, max_n: int = 50) -> SuiteResult:
    """1 - prod(x_i) >= prod(1 - x_i) for x_i in [0, 1]."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("lemma_product_inequality", trials)
    for i in range(trials):
        n = int(rng.integers(1, max_n + 1))
        x = rng.uniform(0.0, 1.0, size=n)
        lhs = 1.0 - np.prod(x)
        rhs = np.prod(1.0 - x)
        if not lhs >= rhs - 1e-12:
            result.failures.append({"trial": i, "lhs": float(lhs), "rhs": float(rhs), "x": x.tolist()})
    return result


def _random_densities(rng: np.random.Generator, c_gt: np.ndarray) -> DensityTable:
    """Feedback-consistent random densities: unsafe cells never occur in safe
    segments (d_g = 0) and coverage is sufficient everywhere."""
    shape = c_gt.shape
    d_g = rng.integers(0, 11, size=shape).astype(np.float64)
    d_b = rng.integers(0, 11, size=shape).astype(np.float64)
    unsafe = c_gt == 1.0
    d_g[unsafe] = 0.0
    d_b[unsafe] = rng.integers(1, 11, size=int(unsafe.sum())).astype(np.float64)
    empty = (d_g + d_b) == 0.0
    d_g[empty] = rng.integers(1, 11, size=int(empty.sum())).astype(np.float64)
    return DensityTable(d_g=d_g, d_b=d_b)


def prop2_closed_form(seed: int, datasets: int = 20, steps: int = 4000, lr: float = 0.05) -> SuiteResult:
    """Gradient descent on per-cell logits reaches d_g/(d_g+d_b) within 1e-2,
    and the analytic loss gradient vanishes at the closed form within 1e-9."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("prop2_closed_form", datasets)
    for i in range(datasets):
        S = int(rng.integers(3, 8))
        A = int(rng.integers(2, 4))
        c_gt = (rng.random((S, A)) < 0.3).astype(np.float64)
        dens = _random_densities(rng, c_gt)
        p_star = closed_form_estimate(dens)

        grad_at_star = density_loss_grad_logits(dens, p_star)
        if np.max(np.abs(grad_at_star)) > 1e-9:
            result.failures.append({"dataset": i, "case": "gradient at closed form",
                                    "max_abs_grad": float(np.max(np.abs(grad_at_star)))})
            continue

        logits = np.zeros((S, A))
        opt = Adam(logits.size, lr=lr)
        flat = logits.ravel()
        for _ in range(steps):
            p = sigmoid(flat.reshape(S, A))
            grad = density_loss_grad_logits(dens, p).ravel()
            flat = opt.step(flat, grad)
        p_trained = sigmoid(flat.reshape(S, A))
        err = np.max(np.abs(p_trained - p_star))
        if err > 1e-2:
            result.failures.append({"dataset": i, "case": "trained vs closed form",
                                    "max_abs_err": float(err)})
    return result


def prop3_bias_identity(seed: int, instances: int = 50, policies_per: int = 200) -> SuiteResult:
    """On random CMDPs with sufficient feedback-consistent densities:
    J^{c*} - J^{c_gt} equals the mislabeled safe-state occupancy mass within
    1e-9, the bias is never negative, and c*-safety implies c_gt-safety."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("prop3_bias_identity", instances)
    for i in range(instances):
        cmdp = random_cmdp(rng, n_states=5, n_actions=3, gamma=float(rng.uniform(0.7, 0.97)))
        dens = _random_densities(rng, cmdp.c_gt)
        c_star = (dens.d_b > dens.d_g).astype(np.float64)

        policy = random_policy(rng, cmdp.n_states, cmdp.n_actions)
        j_star = discounted_value(cmdp, policy, c_star)
        j_gt = discounted_value(cmdp, policy, cmdp.c_gt)
        bias_formula = estimation_bias(cmdp, policy, dens)
        if abs((j_star - j_gt) - bias_formula) > 1e-9:
            result.failures.append({"instance": i, "case": "identity",
                                    "direct": j_star - j_gt, "formula": bias_formula})
            continue
        if bias_formula < 0.0 or (j_star - j_gt) < -1e-12:
            result.failures.append({"instance": i, "case": "bias sign",
                                    "bias": bias_formula, "direct": j_star - j_gt})
            continue

        corollary_ok = True
        for _ in range(policies_per):
            pol = random_policy(rng, cmdp.n_states, cmdp.n_actions)
            j_star_p = discounted_value(cmdp, pol, c_star)
            j_gt_p = discounted_value(cmdp, pol, cmdp.c_gt)
            c_max = float(rng.uniform(0.0, 0.6 / (1.0 - cmdp.gamma)))
            if j_star_p <= c_max and not j_gt_p <= c_max + 1e-9:
                result.failures.append({"instance": i, "case": "corollary",
                                        "j_star": j_star_p, "j_gt": j_gt_p, "c_max": c_max})
                corollary_ok = False
                break
        if not corollary_ok:
            continue
    return result


def simhash_lsh(seed: int, pairs: int = 100_000, dim: int = 6) -> SuiteResult:
    """Per-bit collision rate matches 1 - theta/pi within 0.02, and codes are
    invariant under positive scaling.

    At the reference 10^5 pairs the tolerance is the flat 0.02; below that
    the Monte-Carlo standard error dominates, so the bound widens to five
    standard errors of a Bernoulli rate.
    """
    rng = np.random.default_rng(seed)
    result = SuiteResult("simhash_lsh", pairs)
    tolerance = max(0.02, 5.0 * np.sqrt(0.25 / pairs))
    for theta in (np.pi / 6, np.pi / 4, np.pi / 3, np.pi / 2, 2 * np.pi / 3):
        u = rng.standard_normal((pairs, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        w = rng.standard_normal((pairs, dim))
        w -= (w * u).sum(axis=1, keepdims=True) * u
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        v = np.cos(theta) * u + np.sin(theta) * w
        a = rng.standard_normal((pairs, dim))
        same = np.sign((a * u).sum(axis=1)) == np.sign((a * v).sum(axis=1))
        rate = float(same.mean())
        expected = 1.0 - theta / np.pi
        if abs(rate - expected) > tolerance:
            result.failures.append({"theta": float(theta), "rate": rate, "expected": expected})

    projector = SimHashProjector(n_bits=16, state_dim=dim, seed=seed)
    states = rng.standard_normal((256, dim))
    scales = rng.uniform(0.1, 10.0, size=256)
    base = projector.codes(states)
    scaled = projector.codes(states * scales[:, None])
    mismatches = sum(1 for b, s in zip(base, scaled) if b != s)
    if mismatches:
        result.failures.append({"case": "positive scaling invariance", "mismatches": mismatches})
    return result


def gradient_checks(seed: int, n_nets: int = 5, rel_tol: float = 1e-4) -> SuiteResult:
    """Analytic gradients of the classifier BCE and both critic MSEs match
    central finite differences in relative error."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("gradient_checks", n_nets)
    for i in range(n_nets):
        obs_dim = int(rng.integers(2, 6))
        hidden = [int(rng.integers(3, 8))]
        batch = int(rng.integers(4, 12))
        X = rng.standard_normal((batch, obs_dim))

        clf = SafetyClassifier(obs_dim, hidden, rng, input_mode="state")
        y = rng.integers(0, 2, size=batch).astype(np.float64)
        _, analytic = clf.bce_loss_and_grad(X, y)

        def clf_loss(flat, clf=clf, X=X, y=y):
            saved = clf.mlp.get_flat()
            clf.mlp.set_flat(flat)
            loss, _ = clf.bce_loss_and_grad(X, y)
            clf.mlp.set_flat(saved)
            return loss

        fd = finite_difference_grad(clf_loss, clf.mlp.get_flat())
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12)
        if rel > rel_tol:
            result.failures.append({"net": i, "case": "classifier", "rel_err": float(rel)})
            continue

        for label in ("value_critic", "cost_critic"):
            critic = Critic(obs_dim, hidden, rng)
            targets = rng.standard_normal(batch)
            _, analytic_c = critic.loss_and_grad(X, targets)

            def critic_loss(flat, critic=critic, X=X, targets=targets):
                saved = critic.net.get_flat()
                critic.net.set_flat(flat)
                loss, _ = critic.loss_and_grad(X, targets)
                critic.net.set_flat(saved)
                return loss

            fd_c = finite_difference_grad(critic_loss, critic.net.get_flat())
            rel_c = np.linalg.norm(analytic_c - fd_c) / max(
                np.linalg.norm(analytic_c), np.linalg.norm(fd_c), 1e-12
            )
            if rel_c > rel_tol:
                result.failures.append({"net": i, "case": label, "rel_err": float(rel_c)})
    return result


DEFAULT_COUNTS = {
    "prop1_upper_bound": 10_000,
    "lemma_product_inequality": 10_000,
    "prop2_closed_form": 20,
    "prop3_bias_identity": 50,
    "simhash_lsh": 100_000,
    "gradient_checks": 5,
}


def run_all(seed: int = 0, trials: int | None = None) -> dict:
    """Run every suite; ``trials`` rescales the randomized-instance counts
    (trials=0 produces an empty passing report)."""
    if trials == 0:
        return {"seed": seed, "suites": [], "all_passed": True}
    scale = 1.0 if trials is None else trials / 10_000.0

    def n(name):
        return max(1, int(round(DEFAULT_COUNTS[name] * scale)))

    suites = [
        prop1_upper_bound(seed, n("prop1_upper_bound")),
        lemma_product_inequality(seed + 1, n("lemma_product_inequality")),
        prop2_closed_form(seed + 2, n("prop2_closed_form")),
        prop3_bias_identity(seed + 3, n("prop3_bias_identity")),
        simhash_lsh(seed + 4, n("simhash_lsh")),
        gradient_checks(seed + 5, n("gradient_checks")),
    ]
    return {
        "seed": seed,
        "suites": [s.as_dict() for s in suites],
        "all_passed": all(s.passed for s in suites),
    }
