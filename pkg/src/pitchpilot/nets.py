"""Minimal dense networks with hand-rolled backprop and ADAM.

Everything is float64 numpy.  The default architecture for both policy
and value heads is three tanh hidden layers sized from the interface
widths: h1 = 10*n_in, h3 = 10*n_out, h2 = round(sqrt(h1*h3)), with an
identity output layer.  Gradients are exact reverse-mode; the ADAM step
uses bias-corrected first and second moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or inf; the optimizer step was rejected."""


def default_hidden(n_in: int, n_out: int) -> tuple[int, int, int]:
    h1 = 10 * n_in
    h3 = 10 * n_out
    h2 = int(round(math.sqrt(h1 * h3)))
    return (h1, h2, h3)


@dataclass
class Mlp:
    """Fully-connected net: tanh hidden activations, identity output."""

    dims: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (dims[l+1], dims[l])
    biases: list[np.ndarray]

    @classmethod
    def create(cls, dims, rng) -> "Mlp":
        """Xavier-uniform weights, zero biases, seeded by the caller's rng."""
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad layer dims {dims}")
        weights = []
        biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(dims=dims, weights=weights, biases=biases)

    @classmethod
    def create_default(cls, n_in: int, n_out: int, rng) -> "Mlp":
        return cls.create((n_in, *default_hidden(n_in, n_out), n_out), rng)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def load_params(self, params: list[np.ndarray]) -> None:
        own = self.params()
        if len(own) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, params):
            if dst.shape != src.shape:
                raise ValueError(f"parameter shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Evaluate the net; returns (output, cache of per-layer inputs).

    Accepts a single observation (n_in,) or a batch (n, n_in); the
    output keeps the same leading shape.
    """
    single = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=float))
    cache = []
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.append(a)
        z = a @ w.T + b
        a = z if l == last else np.tanh(z)
    return (a[0] if single else a), cache


def backward(net: Mlp, grad_out: np.ndarray, cache: list[np.ndarray]) -> list[np.ndarray]:
    """Exact gradients of sum(grad_out * output) w.r.t. every parameter.

    Returns the gradient list aligned with net.params(): [dW0, db0, dW1,
    db1, ...], summed over the batch.
    """
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        a_in = cache[l]
        grads[2 * l] = g.T @ a_in
        grads[2 * l + 1] = g.sum(axis=0)
        if l > 0:
            g = g @ net.weights[l]
            g = g * (1.0 - cache[l] * cache[l])  # tanh' from the activated input
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, params: list[np.ndarray], lr: float, **kw) -> "AdamState":
        return cls(lr=lr,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)

    def copy(self) -> "AdamState":
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                         eps=self.eps, t=self.t,
                         m=[a.copy() for a in self.m],
                         v=[a.copy() for a in self.v])


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected ADAM step, in place.

    Rejects the step (and leaves params and moments untouched) if any
    gradient is non-finite.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient, step rejected")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
