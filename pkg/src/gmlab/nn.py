"""A small tanh MLP with hand-written reverse-mode gradients, Adam, and a flat checkpoint.

Parameters are kept as a list ``[W_1, b_1, W_2, b_2, ...]`` with ``W_l`` of shape
``(fan_in, fan_out)`` so a layer computes ``h @ W + b``.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"GMLB"
VERSION = 1


def time_features(x: np.ndarray, t) -> np.ndarray:
    """Network input ``(x, t, sin 2 pi t, cos 2 pi t)`` for a batch ``x`` of shape ``(n, d)``."""
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    ang = 2.0 * math.pi * t
    return np.concatenate([x, t[:, None], np.sin(ang)[:, None], np.cos(ang)[:, None]], axis=1)


class Mlp:
    """Fully connected network, tanh on hidden layers, linear output."""

    def __init__(self, sizes, params=None, rng: np.random.Generator | None = None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValidationError(f"invalid layer sizes {self.sizes}")
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                params.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
                params.append(np.zeros(fan_out))
        self.params = [np.array(p, dtype=float) for p in params]
        for l, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[2 * l].shape != (fan_in, fan_out) or self.params[2 * l + 1].shape != (fan_out,):
                raise ValidationError(f"parameter shapes do not match layer {l}")

    @classmethod
    def for_field(cls, dim: int, hidden=(64, 64, 64), rng=None) -> "Mlp":
        return cls([dim + 3, *hidden, dim], rng=rng)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, inp: np.ndarray, keep: bool = False):
        h = inp
        acts = [h]
        for l in range(self.n_layers):
            h = h @ self.params[2 * l] + self.params[2 * l + 1]
            if l < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, grad_out: np.ndarray) -> list:
        """Parameter gradients given ``d loss / d output``, from the activations of :meth:`forward`."""
        grads = [None] * len(self.params)
        delta = grad_out
        for l in reversed(range(self.n_layers)):
            grads[2 * l] = acts[l].T @ delta
            grads[2 * l + 1] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.params[2 * l].T) * (1.0 - acts[l] ** 2)
        return grads

    def field(self, x: np.ndarray, t) -> np.ndarray:
        return self.forward(time_features(x, t))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        k = 0
        for p in self.params:
            p[...] = vec[k:k + p.size].reshape(p.shape)
            k += p.size

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [p.copy() for p in self.params])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, params, grads) -> None:
        self.k += 1
        c1 = 1.0 - self.beta1 ** self.k
        c2 = 1.0 - self.beta2 ** self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(model: Mlp, path) -> None:
    """``GMLB``, u32 version, u32 layer count + u32 sizes, then float64 LE parameters in layer order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(model.sizes)))
        fh.write(struct.pack(f"<{len(model.sizes)}I", *model.sizes))
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> Mlp:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not a GMLB checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    sizes = list(struct.unpack_from(f"<{count}I", raw, 12))
    data = np.frombuffer(raw, dtype="<f8", offset=12 + 4 * count)
    params, k = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            if k + size > data.size:
                raise ValidationError(f"{path}: truncated checkpoint")
            params.append(data[k:k + size].reshape(shape).astype(float))
            k += size
    if k != data.size:
        raise ValidationError(f"{path}: {data.size - k} trailing values")
    return Mlp(sizes, params)
