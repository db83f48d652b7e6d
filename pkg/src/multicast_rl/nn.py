"""Dense ReLU networks trained with masked mean-squared error and Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_MAGIC = b"MLPW"


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


class Mlp:
    """Feed-forward network: ReLU on hidden layers, linear output.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
    shape ``(n, fan_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes, all positive")
        self.sizes = tuple(int(s) for s in sizes)
        pairs = list(zip(self.sizes[:-1], self.sizes[1:]))
        # all parameters live in one flat buffer; weights and biases are views into it
        self.flat = np.zeros(sum(i * o + o for i, o in pairs))
        self.weights = []
        self.biases = []
        pos = 0
        for fan_in, fan_out in pairs:
            w = self.flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = self.flat[pos : pos + fan_out]
            pos += fan_out
            if rng is not None:
                bound = np.sqrt(6.0 / fan_in)
                w[...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(b)
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.steps = 0

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_params(self) -> int:
        return self.flat.size

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def forward(net: Mlp, x) -> np.ndarray:
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.sizes[0]:
        raise ValueError(f"input has size {h.shape[-1]}, network expects {net.sizes[0]}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(net.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _backward(net: Mlp, acts: list[np.ndarray], delta: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Parameter gradients (ordered like ``params()``) and the input gradient."""
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (acts[i] > 0)
    return grads, delta


def mse_and_grad(net: Mlp, x, targets, actions=None) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over a batch and its gradient.

    With ``actions`` given, only output ``actions[j]`` of sample ``j`` is
    compared against the scalar ``targets[j]``; other outputs get no gradient.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    targets = np.asarray(targets, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    acts = _forward_cache(net, x)
    out = acts[-1]
    delta = np.zeros_like(out)
    if actions is None:
        err = out - targets.reshape(out.shape)
        delta[...] = 2.0 * err / n
    else:
        rows = np.arange(n)
        err = out[rows, actions] - targets.reshape(n)
        delta[rows, actions] = 2.0 * err / n
    loss = float(np.sum(err**2) / n)
    grads, _ = _backward(net, acts, delta)
    return loss, grads


def input_gradient(net: Mlp, x) -> np.ndarray:
    """Gradient of the (scalar) network output with respect to a single input."""
    if net.sizes[-1] != 1:
        raise ValueError("input_gradient needs a scalar-output network")
    acts = _forward_cache(net, np.atleast_2d(np.asarray(x, dtype=float)))
    _, dx = _backward(net, acts, np.ones_like(acts[-1]))
    return dx[0]


def adam_step(net: Mlp, grads: Sequence[np.ndarray], lr: float, cfg: AdamConfig = AdamConfig()) -> None:
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the network")
    g = np.concatenate([x.ravel() for x in grads])
    net.steps += 1
    t = net.steps
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    net.m *= cfg.beta1
    net.m += (1.0 - cfg.beta1) * g
    net.v *= cfg.beta2
    net.v += (1.0 - cfg.beta2) * g * g
    net.flat -= (lr / c1) * net.m / (np.sqrt(net.v / c2) + cfg.eps)


def copy_weights(src: Mlp, dst: Mlp) -> None:
    if src.sizes != dst.sizes:
        raise ValueError(f"architecture mismatch: {src.sizes} vs {dst.sizes}")
    dst.flat[...] = src.flat


def save_weights(net: Mlp, path: str | Path) -> None:
    """Write ``MLPW``, layer count and sizes (little-endian uint32), then float64 parameters."""
    header = _MAGIC + struct.pack(f"<I{len(net.sizes)}I", len(net.sizes), *net.sizes)
    flat = net.flat.astype("<f8")
    Path(path).write_bytes(header + flat.tobytes())


def load_weights(path: str | Path) -> Mlp:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a weight snapshot")
    (k,) = struct.unpack_from("<I", raw, 4)
    sizes = struct.unpack_from(f"<{k}I", raw, 8)
    net = Mlp(sizes)
    flat = np.frombuffer(raw, dtype="<f8", offset=8 + 4 * k)
    if flat.size != net.num_params():
        raise ValueError("snapshot size does not match its header")
    net.flat[...] = flat
    return net
