"""Linear, feed-forward and LSTM regressors in plain numpy with hand-written backprop.

Parameters live in a flat ``dict[str, ndarray]``. Every ``forward`` returns
``(out, cache)`` and the matching ``backward(params, cache, dout)`` returns a
gradient dict with the same keys.
"""
from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(arch: str, d_in: int, n_out: int, step_dim: int, hidden: int, layers: int,
                rng: np.random.Generator) -> Params:
    p: Params = {}
    if arch == "linear":
        p["W"] = _uniform(rng, d_in, (d_in, n_out))
        p["b"] = np.zeros(n_out)
        return p
    if arch == "rnn":
        n = hidden
        p["Wx"] = _uniform(rng, n, (step_dim, 4 * n))
        p["Wh"] = _uniform(rng, n, (n, 4 * n))
        b = _uniform(rng, n, (4 * n,))
        b[n:2 * n] += 1.0  # forget-gate bias
        p["bl"] = b
        head_in = n
    elif arch == "ff":
        head_in = d_in
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    width = head_in
    for i in range(layers):
        p[f"W{i + 1}"] = _uniform(rng, width, (width, hidden))
        p[f"b{i + 1}"] = _uniform(rng, width, (hidden,))
        width = hidden
    p["Wout"] = _uniform(rng, width, (width, n_out))
    p["bout"] = _uniform(rng, width, (n_out,))
    return p


def _n_layers(p: Params) -> int:
    i = 0
    while f"W{i + 1}" in p:
        i += 1
    return i


def _mlp_forward(p, x):
    acts = [x]
    h = x
    for i in range(_n_layers(p)):
        h = np.tanh(h @ p[f"W{i + 1}"] + p[f"b{i + 1}"])
        acts.append(h)
    return h @ p["Wout"] + p["bout"], acts


def _mlp_backward(p, acts, dout, grads):
    grads["Wout"] = acts[-1].T @ dout
    grads["bout"] = dout.sum(axis=0)
    dh = dout @ p["Wout"].T
    for i in reversed(range(_n_layers(p))):
        h = acts[i + 1]
        da = dh * (1.0 - h * h)
        grads[f"W{i + 1}"] = acts[i].T @ da
        grads[f"b{i + 1}"] = da.sum(axis=0)
        dh = da @ p[f"W{i + 1}"].T
    return dh


def _lstm_forward(p, X, step_dim):
    B = X.shape[0]
    T = X.shape[1] // step_dim
    # windows are stored newest first; the cell consumes them oldest first
    xs = X.reshape(B, T, step_dim)[:, ::-1, :]
    n = p["Wh"].shape[0]
    h = np.zeros((B, n))
    c = np.zeros((B, n))
    steps = []
    for t in range(T):
        x = xs[:, t, :]
        z = x @ p["Wx"] + h @ p["Wh"] + p["bl"]
        i = sigmoid(z[:, :n])
        f = sigmoid(z[:, n:2 * n])
        g = np.tanh(z[:, 2 * n:3 * n])
        o = sigmoid(z[:, 3 * n:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((x, h_prev, c_prev, i, f, g, o, tc))
    return h, steps


def _lstm_backward(p, steps, dh, grads):
    n = p["Wh"].shape[0]
    dWx = np.zeros_like(p["Wx"])
    dWh = np.zeros_like(p["Wh"])
    db = np.zeros_like(p["bl"])
    dc = np.zeros_like(dh)
    dz = np.empty((dh.shape[0], 4 * n))
    for x, h_prev, c_prev, i, f, g, o, tc in reversed(steps):
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :n] = dc * g * i * (1.0 - i)
        dz[:, n:2 * n] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * n:3 * n] = dc * i * (1.0 - g * g)
        dz[:, 3 * n:] = dh * tc * o * (1.0 - o)
        dWx += x.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh = dz @ p["Wh"].T
        dc = dc * f
    grads["Wx"], grads["Wh"], grads["bl"] = dWx, dWh, db


def forward(arch: str, p: Params, X: np.ndarray, step_dim: int) -> Tuple[np.ndarray, tuple]:
    if arch == "linear":
        return X @ p["W"] + p["b"], (X,)
    if arch == "ff":
        out, acts = _mlp_forward(p, X)
        return out, (acts,)
    h, steps = _lstm_forward(p, X, step_dim)
    out, acts = _mlp_forward(p, h)
    return out, (acts, steps)


def backward(arch: str, p: Params, cache: tuple, dout: np.ndarray) -> Params:
    grads: Params = {}
    if arch == "linear":
        (X,) = cache
        grads["W"] = X.T @ dout
        grads["b"] = dout.sum(axis=0)
        return grads
    if arch == "ff":
        _mlp_backward(p, cache[0], dout, grads)
        return grads
    acts, steps = cache
    dh = _mlp_backward(p, acts, dout, grads)
    _lstm_backward(p, steps, dh, grads)
    return grads


def mse_and_grad(arch, p, X, Y, step_dim):
    out, cache = forward(arch, p, X, step_dim)
    diff = out - Y
    loss = float(np.mean(diff * diff))
    grads = backward(arch, p, cache, 2.0 * diff / diff.size)
    return loss, grads


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * corr * m / (np.sqrt(v) + self.eps)
