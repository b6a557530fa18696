"""Small fully connected networks with hand-written backpropagation."""
from __future__ import annotations

import numpy as np


class NumericError(FloatingPointError):
    pass


def _relu(x):
    return np.maximum(x, 0.0)


_ACT = {
    "relu": (_relu, lambda y, x: (x > 0).astype(x.dtype)),
    "tanh": (np.tanh, lambda y, x: 1.0 - y * y),
    "linear": (lambda x: x, lambda y, x: np.ones_like(x)),
}


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class MLP:
    """Hidden layers with the given activations, then a linear output head.

    Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` with
    ``W_i`` of shape (fan_in, fan_out).
    """

    def __init__(self, sizes, activations, rng: np.random.Generator | None = None, zero: bool = False):
        if len(activations) != len(sizes) - 2:
            raise ValueError("need one activation per hidden layer")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.params: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero:
                W = np.zeros((fan_in, fan_out))
            else:
                last = i == len(sizes) - 2
                limit = np.sqrt(6.0 / (fan_in + fan_out)) * (0.1 if last else 1.0)
                W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.params += [W, np.zeros(fan_out)]

    def forward(self, x: np.ndarray, cache: bool = False):
        h = np.asarray(x, dtype=float)
        stash = []
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            pre = h @ W
            pre += b
            if i < n_layers - 1:
                out = _ACT[self.activations[i]][0](pre)
            else:
                out = pre
            stash.append((h, pre, out))
            h = out
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite network output")
        return (h, stash) if cache else h

    def backward(self, stash, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. params and the input."""
        grads: list[np.ndarray] = [None] * len(self.params)
        g = np.asarray(grad_out, dtype=float)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            h_in, pre, out = stash[i]
            if i < n_layers - 1:
                g = g * _ACT[self.activations[i]][1](out, pre)
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    # parameter plumbing ------------------------------------------------
    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.params = [p.copy() for p in self.params]
        return other

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size


def soft_update(target: MLP, source: MLP, lam: float) -> MLP:
    """target <- lam * source + (1 - lam) * target, in place."""
    if len(target.params) != len(source.params) or any(
            t.shape != s.shape for t, s in zip(target.params, source.params)):
        raise ValueError("target and source shapes differ")
    for t, s in zip(target.params, source.params):
        t *= 1.0 - lam
        t += lam * s
    return target


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step_size = self.lr / c1
        inv_sqrt_c2 = 1.0 / np.sqrt(c2)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * np.square(g)
            # p -= lr * m_hat / (sqrt(v_hat) + eps), with few temporaries
            denom = np.sqrt(v)
            denom *= inv_sqrt_c2
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= step_size
            p -= denom

    def state(self) -> list[np.ndarray]:
        return self.m + self.v


class SGD:
    def __init__(self, params, lr: float = 1e-3):
        self.params = params
        self.lr = lr

    def step(self, grads) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g
