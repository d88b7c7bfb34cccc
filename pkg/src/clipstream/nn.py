"""Two-layer ReLU perceptron with explicit reverse-mode gradients."""
from __future__ import annotations

import numpy as np

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class TwoLayerMLP:
    """y = relu(x @ w1 + b1) @ w2 + b2, batched over rows of x.

    Parameters are stored as float32 (checkpoint precision); forward and
    backward run in float64.
    """

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator | None = None,
                 params: dict | None = None):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        if params is not None:
            self.params = {k: np.asarray(params[k], dtype=np.float32).copy() for k in PARAM_NAMES}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        a1, a2 = 1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_hidden)
        self.params = {
            "w1": rng.uniform(-a1, a1, (n_in, n_hidden)).astype(np.float32),
            "b1": rng.uniform(-a1, a1, n_hidden).astype(np.float32),
            "w2": rng.uniform(-a2, a2, (n_hidden, n_out)).astype(np.float32),
            "b2": rng.uniform(-a2, a2, n_out).astype(np.float32),
        }

    def copy(self) -> "TwoLayerMLP":
        return TwoLayerMLP(self.n_in, self.n_hidden, self.n_out, params=self.params)

    def forward(self, x: np.ndarray, params: dict | None = None):
        p = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        pre = x @ p["w1"].astype(np.float64) + p["b1"]
        h = np.maximum(pre, 0.0)
        y = h @ p["w2"].astype(np.float64) + p["b2"]
        return y, (x, pre, h)

    def backward(self, cache, dy: np.ndarray, params: dict | None = None):
        """Return (param_grads, dx) for upstream gradient dy (same shape as the forward output)."""
        p = self.params if params is None else params
        x, pre, h = cache
        dy = np.asarray(dy, dtype=np.float64)
        grads = {"w2": h.T @ dy, "b2": dy.sum(axis=0)}
        dh = dy @ p["w2"].astype(np.float64).T
        dpre = dh * (pre > 0)
        grads["w1"] = x.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        dx = dpre @ p["w1"].astype(np.float64).T
        return grads, dx
