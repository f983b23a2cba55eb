"""Safety classifier and cost inference from segment-level feedback.

A segment is labelled safe only if every state in it is safe, so the
probability a segment is safe is the product of its per-state safe
probabilities. Training directly on that product (the likelihood loss) is
unstable for long segments; the surrogate loss instead gives every state its
segment's label and reduces to per-state binary cross-entropy, a noisy-label
classification problem whose optimum has the closed form
d_g / (d_g + d_b) in the safe/unsafe visitation densities.

Loss convention is negative log-likelihood (smaller is better) and both
segment-batch losses are means over segments, the only normalization under
which the surrogate upper-bounds the likelihood loss with equality at
segment length 1 and for all-safe labels.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .nets import MLP, Adam, sigmoid
from .tabular import occupancy_measure
from .types import (
    InsufficientFeedbackError,
    Trajectory,
    UndefinedEstimateError,
    ValidationError,
    canonical_json,
)

LOG_CLAMP = 1e-12

SegmentBatch = "sequence of (per-step safe probabilities, y_safe) pairs"


@dataclass(frozen=True)
class LabeledExample:
    state: np.ndarray
    action: np.ndarray
    y_safe: int

    def __post_init__(self):
        if self.y_safe not in (0, 1):
            raise ValidationError("y_safe must be 0 or 1")


@dataclass
class DensityTable:
    """Per-(s, a) visitation weights in safe (d_g) and unsafe (d_b) segments."""

    d_g: np.ndarray
    d_b: np.ndarray

    def __post_init__(self):
        self.d_g = np.asarray(self.d_g, dtype=np.float64)
        self.d_b = np.asarray(self.d_b, dtype=np.float64)
        if self.d_g.shape != self.d_b.shape:
            raise ValidationError("d_g and d_b must have the same shape")
        if np.any(self.d_g < 0) or np.any(self.d_b < 0):
            raise ValidationError("densities must be non-negative")

    @property
    def total(self) -> np.ndarray:
        return self.d_g + self.d_b


def _clamped_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, LOG_CLAMP))


def _as_segment(item) -> tuple[np.ndarray, int]:
    probs, y = item
    probs = np.atleast_1d(np.asarray(probs, dtype=np.float64))
    if probs.size == 0:
        raise ValidationError("segment probability list must be non-empty")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValidationError("per-step probabilities must lie in [0, 1]")
    if y not in (0, 1):
        raise ValidationError("segment label must be 0 or 1")
    return probs, int(y)


def segment_safe_prob(probs) -> float:
    """Probability the whole segment is safe: the product of per-step values."""
    probs = np.atleast_1d(np.asarray(probs, dtype=np.float64))
    if probs.size == 0:
        raise ValidationError("segment probability list must be non-empty")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValidationError("per-step probabilities must lie in [0, 1]")
    return float(np.prod(probs))


def mle_loss(batch) -> float:
    """Segment-level NLL: mean over segments of
    -[y * sum_t log p_t + (1 - y) * log(1 - prod_t p_t)]."""
    if len(batch) == 0:
        raise ValidationError("batch must be non-empty")
    total = 0.0
    for item in batch:
        probs, y = _as_segment(item)
        if y == 1:
            total -= float(np.sum(_clamped_log(probs)))
        else:
            prod = float(np.prod(probs))
            if prod >= 1.0:
                warnings.warn(
                    "unsafe-labelled segment with product probability 1; clamping log argument",
                    stacklevel=2,
                )
            total -= float(_clamped_log(np.array(1.0 - prod)))
    return total / len(batch)


def surrogate_loss(batch) -> float:
    """Per-state BCE with segment-label inheritance: mean over segments of
    -sum_t [y * log p_t + (1 - y) * log(1 - p_t)].

    A set of labeled examples is the segment-length-1 special case, under
    which this coincides exactly with :func:`mle_loss`.
    """
    if len(batch) == 0:
        raise ValidationError("batch must be non-empty")
    total = 0.0
    for item in batch:
        probs, y = _as_segment(item)
        if y == 1:
            total -= float(np.sum(_clamped_log(probs)))
        else:
            total -= float(np.sum(_clamped_log(1.0 - probs)))
    return total / len(batch)


def closed_form_estimate(densities: DensityTable) -> np.ndarray:
    """Optimal per-cell safe probability d_g / (d_g + d_b).

    Requires feedback everywhere: any cell with zero total density has no
    defined estimate.
    """
    total = densities.total
    if np.any(total <= 0.0):
        raise UndefinedEstimateError(
            "estimate undefined where d_g + d_b = 0 (insufficient feedback)"
        )
    return densities.d_g / total


def density_loss_grad_logits(densities: DensityTable, p: np.ndarray) -> np.ndarray:
    """Gradient of the density-weighted surrogate loss w.r.t. per-cell logits.

    The loss is -sum [d_g log p + d_b log(1 - p)] / sum(d_g + d_b); in logits
    the per-cell gradient is (d_g + d_b) * (p - p_star) / N, which vanishes
    exactly at the closed-form estimate.
    """
    n = densities.total.sum()
    return (densities.total * p - densities.d_g) / n


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


def encode_action(action: np.ndarray, n_actions: int | None) -> np.ndarray:
    """Discrete actions become one-hot; continuous pass through."""
    action = np.atleast_1d(np.asarray(action, dtype=np.float64))
    if n_actions is None:
        return action
    onehot = np.zeros(n_actions)
    onehot[int(action[0])] = 1.0
    return onehot


class SafetyClassifier:
    """MLP estimator of p_safe with an input feature mask.

    ``input_mode`` selects whether the features are the state alone or the
    state concatenated with the (encoded) action. ``feature_mask`` indexes
    into that feature vector; restricting it to task features lets the
    trained model transfer to agents whose observations append extra
    telemetry.
    """

    def __init__(
        self,
        obs_dim: int,
        hidden: list[int],
        rng: np.random.Generator,
        input_mode: str = "state",
        n_actions: int | None = None,
        action_dim: int = 0,
        feature_mask: list[int] | None = None,
    ):
        if input_mode not in ("state", "state_action"):
            raise ValidationError(f"unknown input_mode {input_mode!r}")
        self.input_mode = input_mode
        self.n_actions = n_actions
        full_dim = obs_dim
        if input_mode == "state_action":
            full_dim += n_actions if n_actions is not None else action_dim
        self.feature_mask = list(range(full_dim)) if feature_mask is None else list(feature_mask)
        if len(self.feature_mask) == 0:
            raise ValidationError("feature mask must select at least one feature")
        self.hidden = list(hidden)
        self.mlp = MLP(len(self.feature_mask), self.hidden, 1, rng)

    def features(self, states: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if self.input_mode == "state_action":
            if actions is None:
                raise ValidationError("state_action classifier needs actions")
            acts = np.stack([encode_action(a, self.n_actions) for a in np.atleast_2d(actions)])
            full = np.concatenate([states, acts], axis=1)
        else:
            full = states
        if max(self.feature_mask) >= full.shape[1]:
            raise ValidationError(
                f"feature mask {max(self.feature_mask)} out of range for "
                f"feature vector of length {full.shape[1]}"
            )
        return full[:, self.feature_mask]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.mlp(X)[:, 0]

    def p_safe(self, states, actions=None) -> np.ndarray:
        """Safe probability, strictly inside (0, 1)."""
        return sigmoid(self.logits(self.features(states, actions)))

    def bce_loss_and_grad(self, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean BCE-with-logits over the batch and its flat parameter gradient."""
        out, cache = self.mlp.forward(X)
        z = out[:, 0]
        y = np.asarray(y, dtype=np.float64)
        # stable softplus form of -[y log p + (1-y) log(1-p)]
        loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
        dz = (sigmoid(z) - y) / len(z)
        grad = self.mlp.backward(cache, dz[:, None])
        return loss, grad


@dataclass
class CostModel:
    """Thresholded cost: c(s, a) = 1 iff p_safe(s, a) < 1/2 (strict)."""

    classifier: SafetyClassifier
    threshold: float = 0.5

    def costs(self, states, actions=None) -> np.ndarray:
        return (self.classifier.p_safe(states, actions) < self.threshold).astype(np.float64)


def infer_cost(model: CostModel, traj: Trajectory) -> np.ndarray:
    """Per-step binary costs for a trajectory under the inferred cost model."""
    return model.costs(traj.states(), traj.actions())


def train_classifier(
    classifier: SafetyClassifier,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int = 5000,
    batch_size: int = 4096,
    lr: float = 1e-4,
    rng: np.random.Generator | None = None,
    optimizer: Adam | None = None,
) -> list[float]:
    """Minibatch training on uniformly sampled states; returns the loss trace.

    ``epochs`` counts gradient steps (one uniformly drawn minibatch each).
    A single-class buffer is allowed but warns: the classifier simply
    saturates toward that class.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValidationError("cannot train on an empty buffer")
    if len(np.unique(y)) < 2:
        warnings.warn("feedback buffer contains a single class; classifier will saturate", stacklevel=2)
    rng = np.random.default_rng(0) if rng is None else rng
    opt = optimizer if optimizer is not None else Adam(classifier.mlp.n_params, lr=lr)
    params = classifier.mlp.get_flat()
    history = []
    full_batch = batch_size >= len(X)
    for _ in range(epochs):
        idx = np.arange(len(X)) if full_batch else rng.integers(0, len(X), size=batch_size)
        loss, grad = classifier.bce_loss_and_grad(X[idx], y[idx])
        params = opt.step(params, grad)
        classifier.mlp.set_flat(params)
        history.append(loss)
    return history


# ---------------------------------------------------------------------------
# Estimation bias (tabular)
# ---------------------------------------------------------------------------


def estimation_bias(cmdp, policy, densities: DensityTable) -> float:
    """Expected overestimation of the incurred cost under the closed form.

    Equals the occupancy mass of truly-safe cells whose unsafe-segment
    density exceeds their safe-segment density, and therefore also equals
    J^{c_*}(pi) - J^{c_gt}(pi) whenever the densities are consistent with
    the labeling process (unsafe cells never appear in safe segments).
    """
    if densities.d_g.shape != cmdp.c_gt.shape:
        raise ValidationError("density table shape must match the CMDP's (S, A)")
    rho = occupancy_measure(cmdp, policy)
    support = rho > 1e-12
    if np.any(support & (densities.total <= 0.0)):
        raise InsufficientFeedbackError(
            "density d_g + d_b is zero on part of the policy's support"
        )
    safe = cmdp.c_gt == 0.0
    mislabeled = densities.d_b > densities.d_g
    return float(np.sum(rho[safe & mislabeled]))


# ---------------------------------------------------------------------------
# Persistence (versioned: JSON header line + raw float64 payload)
# ---------------------------------------------------------------------------

FORMAT_NAME = "rlsf-costmodel"
FORMAT_VERSION = 1


def _config_hash(header: dict) -> str:
    return hashlib.sha256(canonical_json(header).encode()).hexdigest()[:16]


def save_cost_model(model: CostModel, path) -> None:
    clf = model.classifier
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "input_mode": clf.input_mode,
        "n_actions": clf.n_actions,
        "feature_mask": clf.feature_mask,
        "hidden": clf.hidden,
        "threshold": model.threshold,
        "n_params": clf.mlp.n_params,
    }
    header["config_hash"] = _config_hash(header)
    payload = clf.mlp.get_flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(canonical_json(header).encode() + b"\n")
        fh.write(payload)


def load_cost_model(path) -> CostModel:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line)
    if header.get("format") != FORMAT_NAME:
        raise ValidationError(f"not a cost-model checkpoint: {path}")
    if header.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported cost-model format version {header.get('version')}")
    expected = dict(header)
    expected.pop("config_hash")
    if _config_hash(expected) != header["config_hash"]:
        raise ValidationError("cost-model header hash mismatch (corrupt checkpoint)")
    mask = [int(i) for i in header["feature_mask"]]
    clf = SafetyClassifier(
        obs_dim=len(mask),  # placeholder; mask defines the true input slice
        hidden=[int(h) for h in header["hidden"]],
        rng=np.random.default_rng(0),
        input_mode=header["input_mode"],
        n_actions=header["n_actions"],
        feature_mask=mask,
    )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    clf.mlp.set_flat(flat)
    return CostModel(classifier=clf, threshold=float(header["threshold"]))
