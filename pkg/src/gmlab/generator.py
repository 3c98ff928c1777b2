"""Markov generators on R^d built from flow and diffusion parts.

A generator acts on a test function ``f`` as::

    L_t f(x) = grad f(x) . u_t(x) + 1/2 sigma_t(x)^2 * laplacian f(x)

with an isotropic, possibly state-dependent scalar diffusion coefficient
``sigma_t(x)``.  Jump parts on finite state spaces live in :mod:`gmlab.discrete`.
All callables are batched: points come as ``(n, d)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, ValidationError

VectorField = Callable[[np.ndarray, float], np.ndarray]   # (n, d), t -> (n, d)
ScalarField = Callable[[np.ndarray, float], np.ndarray]   # (n, d), t -> (n,)


@dataclass(frozen=True)
class TestFunction:
    """Observable ``f`` with analytic gradient and Hessian (batched)."""

    __test__ = False  # not a pytest class

    name: str
    value: Callable[[np.ndarray], np.ndarray]     # (n, d) -> (n,)
    grad: Callable[[np.ndarray], np.ndarray]      # (n, d) -> (n, d)
    hessian: Callable[[np.ndarray], np.ndarray]   # (n, d) -> (n, d, d)

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=1, axis2=2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(x)


def constant_fn(c: float = 1.0) -> TestFunction:
    return TestFunction(
        f"const{c:g}",
        lambda x: np.full(x.shape[0], float(c)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
    )


def affine_fn(a: np.ndarray, b: float = 0.0, name: str = "affine") -> TestFunction:
    a = np.asarray(a, dtype=float)
    return TestFunction(
        name,
        lambda x: x @ a + b,
        lambda x: np.broadcast_to(a, x.shape).copy(),
        lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
    )


def quadratic_fn(A: np.ndarray, name: str = "quadratic") -> TestFunction:
    """``f(x) = 1/2 x^T A x`` for symmetric ``A``."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    return TestFunction(
        name,
        lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, A, x),
        lambda x: x @ A,
        lambda x: np.broadcast_to(A, (x.shape[0],) + A.shape).copy(),
    )


def cosine_fn(k: np.ndarray, phase: float = 0.0, name: str = "cos") -> TestFunction:
    """``f(x) = cos(k . x + phase)``."""
    k = np.asarray(k, dtype=float)
    kk = np.outer(k, k)

    def value(x):
        return np.cos(x @ k + phase)

    def grad(x):
        return -np.sin(x @ k + phase)[:, None] * k[None, :]

    def hessian(x):
        return -np.cos(x @ k + phase)[:, None, None] * kk[None, :, :]

    return TestFunction(name, value, grad, hessian)


def bump_fn(center: np.ndarray, width: float, name: str = "bump") -> TestFunction:
    """Unnormalised Gaussian bump ``exp(-|x - c|^2 / (2 w^2))``."""
    c = np.asarray(center, dtype=float)
    w2 = float(width) ** 2

    def value(x):
        return np.exp(-0.5 * np.sum((x - c) ** 2, axis=1) / w2)

    def grad(x):
        return -value(x)[:, None] * (x - c) / w2

    def hessian(x):
        r = (x - c) / w2
        eye = np.eye(x.shape[1])[None, :, :]
        return value(x)[:, None, None] * (r[:, :, None] * r[:, None, :] - eye / w2)

    return TestFunction(name, value, grad, hessian)


def battery(dim: int) -> list[TestFunction]:
    """The fixed test-function battery: affine, quadratic, two cosines, two bumps."""
    ramp = np.linspace(1.0, 0.5, dim)
    A = np.diag(np.linspace(1.0, 2.0, dim))
    if dim > 1:
        A[0, 1] = A[1, 0] = 0.5
    e1 = np.eye(dim)[0]
    return [
        affine_fn(ramp * np.array([(-1) ** i for i in range(dim)]), 0.3),
        quadratic_fn(A),
        cosine_fn(ramp, 0.0, "cos1"),
        cosine_fn(2.0 * ramp[::-1], 0.3, "cos2"),
        bump_fn(0.5 * np.ones(dim), 0.7, "bump_center"),
        bump_fn(-1.5 * e1, 1.0, "bump_side"),
    ]


@dataclass(frozen=True)
class ContinuousGenerator:
    """Flow part ``velocity(x, t)`` and/or diffusion part ``diffusion(x, t) = sigma_t(x)``.

    ``diffusion_sq_grad`` (gradient of ``sigma^2`` in ``x``) is only needed to time-reverse a
    generator with state-dependent noise; ``None`` means the coefficient is constant in ``x``.
    """

    velocity: VectorField | None = None
    diffusion: ScalarField | None = None
    diffusion_sq_grad: VectorField | None = None
    name: str = "generator"

    def __post_init__(self):
        if self.velocity is None and self.diffusion is None:
            raise ValidationError("a generator needs a velocity or a diffusion component")

    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.velocity is None:
            return np.zeros_like(x)
        return np.asarray(self.velocity(x, t), dtype=float).reshape(x.shape)

    def sigma(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.diffusion is None:
            return np.zeros(x.shape[0])
        s = np.broadcast_to(np.asarray(self.diffusion(x, t), dtype=float), (x.shape[0],))
        if np.any(s < 0):
            raise EvaluationError(f"{self.name}: negative diffusion coefficient at t={t}")
        return s

    def sigma_sq_grad(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.diffusion is None or self.diffusion_sq_grad is None:
            return np.zeros_like(x)
        return np.asarray(self.diffusion_sq_grad(x, t), dtype=float).reshape(x.shape)

    def apply(self, f: TestFunction, x: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(x.shape[0])
        if self.velocity is not None:
            u = self.drift(x, t)
            _check_finite(u, self.name, "velocity", t)
            out = out + np.einsum("nd,nd->n", f.grad(x), u)
        if self.diffusion is not None:
            s = self.sigma(x, t)
            _check_finite(s, self.name, "diffusion", t)
            out = out + 0.5 * f.laplacian(x) * s * s
        return out


def _check_finite(v, name, part, t):
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"{name}: non-finite {part} component at t={t}")


@dataclass(frozen=True)
class SuperposedGenerator:
    """Convex combination of generators; acts linearly."""

    parts: tuple[tuple[float, ContinuousGenerator], ...]
    name: str = field(default="superposition")

    def apply(self, f: TestFunction, x: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(x.shape[0])
        for w, g in self.parts:
            if w != 0.0:
                out = out + w * g.apply(f, x, t)
        return out

    def combined(self) -> ContinuousGenerator:
        """A single generator with velocity ``sum w_i u_i`` and ``sigma^2 = sum w_i sigma_i^2``.

        Zero-weight parts are dropped, so a ``(1, 0)`` mixture reproduces its first part.
        """
        live = [(w, g) for w, g in self.parts if w != 0.0]
        has_vel = any(g.velocity is not None for _, g in live)
        has_diff = any(g.diffusion is not None for _, g in live)

        def velocity(x, t):
            out = None
            for w, g in live:
                if g.velocity is not None:
                    term = w * g.drift(x, t)
                    out = term if out is None else out + term
            return out

        def diffusion(x, t):
            var = np.zeros(x.shape[0])
            for w, g in live:
                if g.diffusion is not None:
                    var = var + w * g.sigma(x, t) ** 2
            return np.sqrt(var)

        def diffusion_sq_grad(x, t):
            out = np.zeros_like(x)
            for w, g in live:
                if g.diffusion is not None:
                    out = out + w * g.sigma_sq_grad(x, t)
            return out

        if len(live) == 1 and live[0][0] == 1.0:
            return live[0][1]
        return ContinuousGenerator(
            velocity=velocity if has_vel else None,
            diffusion=diffusion if has_diff else None,
            diffusion_sq_grad=diffusion_sq_grad if has_diff else None,
            name=self.name,
        )


def apply_generator(gen, f: TestFunction, x, t: float):
    """``L_t f(x)`` for a single point ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(gen.apply(f, x[None, :], t)[0])
    return gen.apply(f, x, t)


def superpose(parts: Sequence[tuple[float, ContinuousGenerator]],
              name: str = "superposition") -> SuperposedGenerator:
    parts = tuple((float(w), g) for w, g in parts)
    if not parts:
        raise ValidationError("superposition needs at least one part")
    weights = np.array([w for w, _ in parts])
    if np.any(weights < 0):
        raise ValidationError(f"superposition weights must be >= 0, got {weights.tolist()}")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ValidationError(f"superposition weights must sum to 1, got {weights.sum()!r}")
    return SuperposedGenerator(parts, name)


def marginal_from_conditional(cond_velocity, posterior, x, t: float):
    """``E_{z ~ p(z | x_t = x)}[u_t(x | z)]`` for a finite posterior.

    ``posterior(x, t)`` returns ``(atoms, weights)`` with ``weights`` of shape ``(n, K)``;
    ``cond_velocity(x, t, z)`` returns ``(n, d)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    atoms, w = posterior(xb, t)
    w = np.asarray(w, dtype=float).reshape(xb.shape[0], -1)
    if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("posterior weights must sum to 1 within 1e-9")
    out = np.zeros_like(xb)
    for k, z in enumerate(atoms):
        out += w[:, k:k + 1] * np.asarray(cond_velocity(xb, t, z), dtype=float).reshape(xb.shape)
    return out[0] if single else out


# --------------------------------------------------------------------------- matched generators

def flow_generator(path, scale: float = 1.0, name: str = "flow") -> ContinuousGenerator:
    """Pure transport along the path's marginal velocity (``scale != 1`` breaks the match)."""
    if scale == 1.0:
        return ContinuousGenerator(velocity=path.velocity, name=name)
    return ContinuousGenerator(velocity=lambda x, t: scale * path.velocity(x, t), name=name)


def langevin_generator(path, epsilon: float, name: str | None = None) -> ContinuousGenerator:
    """Flow plus a score-corrected noise part that leaves the marginals untouched:
    velocity ``u + eps^2/2 * score``, diffusion ``eps``."""
    eps = float(epsilon)
    c = 0.5 * eps * eps

    def velocity(x, t):
        return path.velocity(x, t) + c * path.score(x, t)

    return ContinuousGenerator(velocity=velocity,
                               diffusion=lambda x, t: np.full(x.shape[0], eps),
                               name=name or f"flow+langevin(eps={eps:g})")


def bump_noise(scale: float, center=0.0, width: float = 1.0):
    """State-dependent coefficient ``sigma(x) = scale * exp(-|x - c|^2 / (4 w^2))``.

    Returns ``(sigma, grad_sigma_sq)``; ``sigma^2`` is then a unit Gaussian bump of width ``w``.
    """
    s = float(scale)
    w2 = float(width) ** 2

    def sigma(x, t):
        c = np.broadcast_to(np.asarray(center, dtype=float), (x.shape[1],))
        return s * np.exp(-0.25 * np.sum((x - c) ** 2, axis=1) / w2)

    def grad_sigma_sq(x, t):
        c = np.broadcast_to(np.asarray(center, dtype=float), (x.shape[1],))
        sig2 = s * s * np.exp(-0.5 * np.sum((x - c) ** 2, axis=1) / w2)
        return -sig2[:, None] * (x - c) / w2

    return sigma, grad_sigma_sq


def state_dependent_generator(path, sigma_fn, grad_sigma_sq, name: str = "flow+state_noise"):
    """Flow plus noise ``sigma_t(x)`` with the drift correction
    ``1/2 (sigma^2 score + grad sigma^2)`` that keeps the marginals fixed."""

    def velocity(x, t):
        s2 = sigma_fn(x, t) ** 2
        return path.velocity(x, t) + 0.5 * (s2[:, None] * path.score(x, t) + grad_sigma_sq(x, t))

    return ContinuousGenerator(velocity=velocity, diffusion=sigma_fn,
                               diffusion_sq_grad=grad_sigma_sq, name=name)


def diffusion_form_generator(ds, name: str = "diffusion_sde") -> ContinuousGenerator:
    """The forward SDE ``dz = f_t z dt + g_t dW`` of a diffusion schedule."""
    return ContinuousGenerator(
        velocity=lambda x, t: float(ds.f(t)) * x,
        diffusion=lambda x, t: np.full(x.shape[0], float(ds.g(t))),
        name=name,
    )


def zero_generator() -> ContinuousGenerator:
    return ContinuousGenerator(velocity=lambda x, t: np.zeros_like(x), name="zero")


def time_reversed(gen: ContinuousGenerator, score_fn: VectorField,
                  name: str | None = None) -> ContinuousGenerator:
    """Generator of the same process run backwards, in reversed time ``tau = 1 - t``.

    Velocity ``-b + sigma^2 score + grad sigma^2``, same diffusion coefficient;
    ``score_fn`` is evaluated in forward time.
    """

    def velocity(x, tau):
        t = 1.0 - tau
        out = -gen.drift(x, t)
        if gen.diffusion is not None:
            s2 = gen.sigma(x, t) ** 2
            out = out + s2[:, None] * score_fn(x, t) + gen.sigma_sq_grad(x, t)
        return out

    diffusion = None
    if gen.diffusion is not None:
        diffusion = lambda x, tau: gen.sigma(x, 1.0 - tau)  # noqa: E731
    grad = None
    if gen.diffusion_sq_grad is not None:
        grad = lambda x, tau: gen.sigma_sq_grad(x, 1.0 - tau)  # noqa: E731
    return ContinuousGenerator(velocity=velocity, diffusion=diffusion,
                               diffusion_sq_grad=grad, name=name or f"reversed({gen.name})")
