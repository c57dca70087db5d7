"""Small ReLU multilayer perceptron with hand-written reverse-mode gradients and Adam."""

from __future__ import annotations

import numpy as np

DEFAULT_LAYERS = (75, 128, 128, 4)


class MLP:
    """Fully connected network ``x -> ReLU(x W1 + b1) -> ... -> x Wk + bk``.

    Args:
        layers: layer widths, input first.
        rng: generator for He-uniform initialisation.
        dtype: parameter dtype (float32 for training, float64 for gradient checks).
    """

    def __init__(self, layers=DEFAULT_LAYERS, rng=None, dtype=np.float32):
        self.layers = tuple(int(n) for n in layers)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for n_in, n_out in zip(self.layers[:-1], self.layers[1:]):
            bound = np.sqrt(6.0 / n_in)
            self.params.append(rng.uniform(-bound, bound, (n_in, n_out)).astype(self.dtype))
            self.params.append(np.zeros(n_out, dtype=self.dtype))

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.layers = self.layers
        other.dtype = self.dtype
        other.params = [p.copy() for p in self.params]
        return other

    def load(self, params) -> None:
        for dst, src in zip(self.params, params):
            if dst.shape != np.shape(src):
                raise ValueError(f"parameter shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def astype(self, dtype) -> "MLP":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = [p.astype(dtype) for p in self.params]
        return other

    def forward(self, x, keep: bool = False):
        """Q-values for a batch ``x`` of shape (N, layers[0]).

        Returns:
            ``q`` or, with ``keep``, ``(q, cache)`` for ``backward``.
        """
        h = np.asarray(x, dtype=self.dtype)
        cache = [h]
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            w, b = self.params[2 * k], self.params[2 * k + 1]
            h = h @ w + b
            if k < n_layers - 1:
                h = np.maximum(h, 0)
            cache.append(h)
        return (h, cache) if keep else h

    __call__ = forward

    def backward(self, cache, dq):
        """Gradients of ``sum(dq * q)`` with respect to every parameter."""
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        g = np.asarray(dq, dtype=self.dtype)
        for k in reversed(range(n_layers)):
            h_in = cache[k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.params[2 * k].T) * (cache[k] > 0)
        return grads


class Adam:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
