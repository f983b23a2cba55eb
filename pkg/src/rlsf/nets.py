"""Minimal fully-connected networks with explicit backprop.

Everything runs in float64 so analytic gradients can be verified against
central finite differences to tight tolerances. Hidden activations are tanh,
outputs are linear; heads (sigmoid, softmax, squashed Gaussian) live with
their consumers.
"""

from __future__ import annotations

import numpy as np

LOGIT_CLAMP = 27.0  # keeps sigmoid/log terms finite without moving the 0.5 threshold


class MLP:
    """Tanh MLP with linear output layer.

    Parameters are exposed as one flat float64 vector (``get_flat`` /
    ``set_flat``) for optimizers, finite-difference checks, and checkpoints.
    """

    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, rng: np.random.Generator):
        self.sizes = [in_dim, *hidden, out_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, cache); cache holds layer inputs for backward."""
        h = np.asarray(X, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        cache = [h]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = np.tanh(z) if i < len(self.weights) - 1 else z
            cache.append(h)
        return h, cache

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Backprop ``dL/d(output)`` through the net; returns the flat gradient."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.asarray(grad_out, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = cache[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - cache[i] ** 2)
        return self._flatten(grads_w, grads_b)

    def _flatten(self, ws, bs) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(ws, bs) for a in pair])

    def get_flat(self) -> np.ndarray:
        return self._flatten(self.weights, self.biases)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        off = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[off : off + W.size].reshape(W.shape).copy()
            off += W.size
            self.biases[i] = flat[off : off + b.size].copy()
            off += b.size


class Adam:
    """Standard Adam on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t, "lr": self.lr}

    def load_state_dict(self, state: dict) -> None:
        self.m = np.asarray(state["m"], dtype=np.float64)
        self.v = np.asarray(state["v"], dtype=np.float64)
        self.t = int(state["t"])
        self.lr = float(state["lr"])


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def finite_difference_grad(fn, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    grad = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        up[i] += h
        down = params.copy()
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad
