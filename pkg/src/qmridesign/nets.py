"""Small dense networks with hand-written backprop, float64 throughout.

Forward passes cache activations so gradients come from exact reverse
accumulation through the same computation; the test suite pins them
against central finite differences.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Mlp", "Adam", "orthogonal", "softmax", "log_softmax"]


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    """Gain-scaled orthogonal matrix (rows x cols)."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity for determinism
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Mlp:
    """Fully connected net with tanh hidden layers and a linear head.

    Hidden weights use orthogonal init with gain sqrt(2); the head gain is
    caller-chosen (small for policy logits, 1 for value heads).
    """

    def __init__(self, sizes, rng: np.random.Generator, out_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = out_gain if i == len(self.sizes) - 2 else np.sqrt(2.0)
            self.weights.append(orthogonal(rng, fan_out, fan_in, gain))
            self.biases.append(np.zeros(fan_out))

    @property
    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x is (batch, in_dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = z if i == last else np.tanh(z)
            activations.append(h)
        return h, (activations, pre)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Parameter gradients for d(loss)/d(output) = grad_out.

        Returns a list aligned with ``parameters`` (dW0, db0, dW1, ...).
        """
        activations, pre = cache
        grads = [None] * (2 * len(self.weights))
        delta = np.atleast_2d(grad_out)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                delta = delta * (1.0 - np.tanh(pre[i]) ** 2)
            grads[2 * i] = delta.T @ activations[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
        return grads

    def get_state(self):
        return [p.copy() for p in self.parameters]

    def set_state(self, state) -> None:
        params = self.parameters
        if len(state) != len(params):
            raise ValueError("state does not match network shape")
        for target, source in zip(params, state):
            if target.shape != np.shape(source):
                raise ValueError("state does not match network shape")
            target[...] = source


class Adam:
    """Adaptive-moment gradient descent over a list of parameter arrays."""

    def __init__(self, params, lr: float = 1.0e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1.0e-5):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def get_state(self):
        return {
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
            "t": self.t,
        }

    def set_state(self, state) -> None:
        self.t = int(state["t"])
        for target, source in zip(self.m, state["m"]):
            target[...] = source
        for target, source in zip(self.v, state["v"]):
            target[...] = source
