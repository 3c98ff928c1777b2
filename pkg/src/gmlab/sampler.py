"""Reverse-time sampling recursions: DDIM, flow Euler, reverse SDE with churn,
score-corrected probability-flow ODE and the interpolant SDE.

Every step maps ``z_t`` to ``z_r`` with ``r < t`` and integrates the displayed
reverse dynamics over ``h = t - r``; injected noise scales as ``sqrt(h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import analytic
from .errors import ConfigError, DomainError, EvaluationError
from .rng import run_blocks
from .schedule import DELTA, DiffusionSchedule, NoiseSchedule, StochasticityLevel, \
    diffusion_from_interpolation

STEP_KINDS = ("ddim", "flow_euler", "reverse_sde", "pf_ode", "interpolant_sde")


# --------------------------------------------------------------------------- single steps

def ddim_step(z_t, x_hat, t: float, r: float, ns: NoiseSchedule):
    """``z_r = alpha_r x_hat + sigma_r eps_hat`` with ``eps_hat = (z_t - alpha_t x_hat) / sigma_t``."""
    if r > t:
        raise DomainError(f"ddim_step runs backwards in time, got r={r} > t={t}")
    if r == t:
        return np.array(z_t, dtype=float, copy=True)
    s_t = float(ns.sigma(t))
    if s_t == 0.0:
        raise ZeroDivisionError(f"ddim_step undefined where sigma_t = 0 (t={t})")
    eps_hat = (z_t - float(ns.alpha(t)) * x_hat) / s_t
    return float(ns.alpha(r)) * x_hat + float(ns.sigma(r)) * eps_hat


def flow_euler_step(z_t, v_hat, t: float, r: float):
    """``z_r = z_t + (r - t) v_hat``."""
    return z_t + (r - t) * v_hat


def _noise(rng, shape):
    return rng.standard_normal(shape)


def reverse_sde_step(z_t, ds: DiffusionSchedule, score_val, t: float, r: float,
                     rng: np.random.Generator | None = None):
    """Euler-Maruyama step of ``dz = (f z - (1 + eta^2)/2 g^2 score) dt + eta g dW`` backwards."""
    h = t - r
    if h <= 0:
        raise DomainError(f"reverse_sde_step needs r < t, got t={t}, r={r}")
    f = float(ds.f(t))
    g2 = float(ds.g(t)) ** 2
    eta = float(ds.eta(t))
    coef = 0.5 * (1.0 + eta * eta) * g2
    drift = f * z_t - coef * score_val
    z_r = z_t - h * drift
    if eta != 0.0 and g2 != 0.0:
        if rng is None:
            raise ValueError("reverse_sde_step with eta > 0 needs an rng")
        z_r = z_r + math.sqrt(h) * eta * math.sqrt(g2) * _noise(rng, np.shape(z_t))
    return z_r


def pf_ode_step(z_t, ds: DiffusionSchedule, score_val, t: float, r: float, eps_t: float = 0.0,
                u_val=None):
    """Deterministic backward Euler step of ``dz = (u - eps^2/2 score) dt``.

    Without ``u_val`` the velocity comes from the schedule, ``u = f z - g^2/2 score``.
    Only ``eps_t = 0`` leaves the marginals unchanged; the score correction needs the
    matching noise (see :func:`interpolant_sde_step`).
    """
    h = t - r
    if h <= 0:
        raise DomainError(f"pf_ode_step needs r < t, got t={t}, r={r}")
    if u_val is None:
        f = float(ds.f(t))
        g2 = float(ds.g(t)) ** 2
        u_val = f * z_t - (0.5 * g2) * score_val
    drift = u_val - (0.5 * eps_t * eps_t) * score_val
    return z_t - h * drift


def interpolant_sde_step(z_t, u_val, score_val, eps_t: float, t: float, r: float,
                         rng: np.random.Generator | None = None):
    """Backward Euler-Maruyama step of ``dz = (u - eps^2/2 score) dt + eps dW``."""
    h = t - r
    if h <= 0:
        raise DomainError(f"interpolant_sde_step needs r < t, got t={t}, r={r}")
    z_r = z_t - h * (u_val - (0.5 * eps_t * eps_t) * score_val)
    if eps_t != 0.0:
        if rng is None:
            raise ValueError("interpolant_sde_step with eps > 0 needs an rng")
        z_r = z_r + math.sqrt(h) * eps_t * _noise(rng, np.shape(z_t))
    return z_r


def generator_step(z_t, gen, tau: float, tau_next: float, rng: np.random.Generator):
    """Forward Euler-Maruyama step of a generator in its own time variable."""
    h = tau_next - tau
    z = z_t + h * gen.drift(z_t, tau)
    if gen.diffusion is not None:
        s = gen.sigma(z_t, tau)
        z = z + math.sqrt(h) * s[:, None] * _noise(rng, z_t.shape)
    return z


# --------------------------------------------------------------------------- field sources

class FieldSource:
    """Denoiser-, noise-, velocity- and score-heads derived from one predicted head.

    Subclasses implement :meth:`predict`, returning their native head named by
    ``self.head`` (``"x"`` for clean-data prediction or ``"velocity"``).
    """

    head = "x"

    def __init__(self, ns: NoiseSchedule):
        self.ns = ns

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def predict(self, z: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def x_hat(self, z, t):
        p = self.predict(z, t)
        if self.head == "x":
            return p
        a, s = float(self.ns.alpha(t)), float(self.ns.sigma(t))
        da, dsg = float(self.ns.alpha_dot(t)), float(self.ns.sigma_dot(t))
        return (s * p - dsg * z) / (da * s - dsg * a)

    def eps_hat(self, z, t, x_hat=None):
        x_hat = self.x_hat(z, t) if x_hat is None else x_hat
        return (z - float(self.ns.alpha(t)) * x_hat) / float(self.ns.sigma(t))

    def velocity(self, z, t):
        if self.head == "velocity":
            return self.predict(z, t)
        x_hat = self.x_hat(z, t)
        eps = self.eps_hat(z, t, x_hat)
        return float(self.ns.alpha_dot(t)) * x_hat + float(self.ns.sigma_dot(t)) * eps

    def score(self, z, t):
        return -self.eps_hat(z, t) / float(self.ns.sigma(t))

    def prior(self, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """``N(0, (alpha_t^2 + sigma_t^2) I)``: exact for standardised data as ``alpha_t -> 0``."""
        scale = math.sqrt(float(self.ns.alpha(t)) ** 2 + float(self.ns.sigma(t)) ** 2)
        return scale * rng.standard_normal((n, self.dim))


class OracleField(FieldSource):
    """Exact posterior-mean denoiser of a Gaussian mixture; initial draws from the exact marginal."""

    def __init__(self, gm: analytic.GaussianMixture, ns: NoiseSchedule):
        super().__init__(ns)
        self.gm = gm

    @property
    def dim(self) -> int:
        return self.gm.dim

    def predict(self, z, t):
        return analytic.denoiser(self.gm, self.ns, z, t)

    def prior(self, t, n, rng):
        return analytic.marginal_law(self.gm, self.ns, t).sample(n, rng)


class PerturbedField(FieldSource):
    """Adds ``magnitude * bump(z) * direction`` to another source's denoiser head."""

    def __init__(self, base: FieldSource, magnitude: float, center=0.5, width: float = 1.0,
                 direction=None):
        super().__init__(base.ns)
        self.base = base
        self.magnitude = float(magnitude)
        d = base.dim
        self.center = np.broadcast_to(np.asarray(center, dtype=float), (d,)).copy()
        self.width = float(width)
        self.direction = (np.eye(d)[0] if direction is None
                          else np.asarray(direction, dtype=float).reshape(d))

    @property
    def dim(self):
        return self.base.dim

    def bump(self, z):
        return np.exp(-0.5 * np.sum((z - self.center) ** 2, axis=1) / self.width ** 2)

    def predict(self, z, t):
        out = self.base.x_hat(z, t)
        if self.magnitude != 0.0:
            out = out + self.magnitude * self.bump(z)[:, None] * self.direction[None, :]
        return out

    def prior(self, t, n, rng):
        return self.base.prior(t, n, rng)


# --------------------------------------------------------------------------- drivers

@dataclass
class SamplerConfig:
    steps: int = 200
    t_start: float = 1.0 - DELTA
    t_end: float = 0.0
    seed: int = 0
    step_kind: str = "ddim"
    epsilon: float | None = None    # pf_ode: 0, interpolant_sde / reverse_sde: 1 when unset
    eta: float | None = None        # reverse_sde only; default eta_t = epsilon / g_t

    def __post_init__(self):
        if self.step_kind not in STEP_KINDS:
            raise ConfigError(f"unknown step kind {self.step_kind!r}; expected one of {STEP_KINDS}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ConfigError(f"steps must be a positive integer, got {self.steps!r}")
        if not 0.0 <= self.t_end < self.t_start <= 1.0 - DELTA + 1e-15:
            raise ConfigError(
                f"need 0 <= t_end < t_start <= {1 - DELTA}, got t_start={self.t_start}, t_end={self.t_end}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.eta is not None and self.eta < 0:
            raise ConfigError("eta must be >= 0")

    @property
    def eps_value(self) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        return 0.0 if self.step_kind == "pf_ode" else 1.0

    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.steps + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray   # (steps + 1, n, d)
    seed: int

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def _diffusion_for(field_src: FieldSource, cfg: SamplerConfig) -> DiffusionSchedule:
    ds = diffusion_from_interpolation(field_src.ns, StochasticityLevel.constant(cfg.eps_value))
    if cfg.eta is None:
        return ds
    eta = float(cfg.eta)
    return DiffusionSchedule(ds.f, ds.g, lambda t: eta + 0.0 * np.asarray(t, dtype=float),
                             name=ds.name, t_max=ds.t_max)


def sample_trajectory(field_src: FieldSource, cfg: SamplerConfig, initial=None,
                      rng: np.random.Generator | None = None, n: int = 1,
                      keep_states: bool = True) -> Trajectory:
    """Run ``cfg.steps`` steps of ``cfg.step_kind`` from ``t_start`` to ``t_end`` on a batch."""
    if rng is None:
        rng = np.random.Generator(np.random.Philox(cfg.seed))
    times = cfg.times()
    if initial is None:
        z = field_src.prior(times[0], n, rng)
    else:
        z = np.atleast_2d(np.asarray(initial, dtype=float)).copy()
    kind = cfg.step_kind
    eps = cfg.eps_value
    ds = _diffusion_for(field_src, cfg) if kind in ("reverse_sde", "pf_ode") else None
    states = [z] if keep_states else None
    for t, r in zip(times[:-1], times[1:]):
        t, r = float(t), float(r)
        if kind == "ddim":
            z = ddim_step(z, field_src.x_hat(z, t), t, r, field_src.ns)
        elif kind == "flow_euler":
            z = flow_euler_step(z, field_src.velocity(z, t), t, r)
        elif kind == "reverse_sde":
            z = reverse_sde_step(z, ds, field_src.score(z, t), t, r, rng)
        elif kind == "pf_ode":
            z = pf_ode_step(z, ds, field_src.score(z, t), t, r, eps)
        else:
            z = interpolant_sde_step(z, field_src.velocity(z, t), field_src.score(z, t), eps, t, r, rng)
        if not np.all(np.isfinite(z)):
            raise EvaluationError(f"{kind} sampler produced non-finite states at t={r}")
        if keep_states:
            states.append(z)
    arr = np.stack(states) if keep_states else z[None]
    return Trajectory(times if keep_states else times[-1:], arr, cfg.seed)


def sample(field_src: FieldSource, cfg: SamplerConfig, n: int, threads: int = 1,
           keep: int = 0) -> tuple[np.ndarray, Trajectory | None]:
    """Terminal samples for ``n`` trajectories (block-seeded); optionally the first ``keep`` paths."""
    if n < 1:
        raise ConfigError("number of samples must be >= 1")

    def block(start, stop, rng):
        want = keep > start
        tr = sample_trajectory(field_src, cfg, rng=rng, n=stop - start, keep_states=want)
        return tr.terminal, (tr.states[:, : max(0, min(stop, keep) - start)] if want else None)

    parts = run_blocks(block, n, cfg.seed, "sample", threads)
    terminal = np.concatenate([p[0] for p in parts])
    kept = None
    if keep > 0:
        states = np.concatenate([p[1] for p in parts if p[1] is not None], axis=1)
        kept = Trajectory(cfg.times(), states, cfg.seed)
    return terminal, kept


def sample_generator(gen, initial: Callable[[int, np.random.Generator], np.ndarray], n: int,
                     steps: int, tau0: float, tau1: float, seed: int, threads: int = 1) -> np.ndarray:
    """Euler-Maruyama simulation of a (reverse-time) generator from ``tau0`` to ``tau1``."""
    taus = np.linspace(tau0, tau1, steps + 1)

    def block(start, stop, rng):
        z = initial(stop - start, rng)
        for a, b in zip(taus[:-1], taus[1:]):
            z = generator_step(z, gen, float(a), float(b), rng)
        if not np.all(np.isfinite(z)):
            raise EvaluationError(f"{gen.name}: non-finite states")
        return z

    return np.concatenate(run_blocks(block, n, seed, "sample", threads))


def moment_check(samples: np.ndarray, mean, var, tol_mean: float = 0.05, tol_var: float = 0.05) -> dict:
    """Per-coordinate comparison of sample moments with a target law."""
    m = samples.mean(axis=0)
    v = samples.var(axis=0, ddof=1)
    dm = np.abs(m - np.asarray(mean))
    dv = np.abs(v - np.asarray(var))
    return {
        "sample_mean": m.tolist(), "sample_var": v.tolist(),
        "target_mean": np.asarray(mean, dtype=float).tolist(),
        "target_var": np.asarray(var, dtype=float).tolist(),
        "max_mean_error": float(dm.max()), "max_var_error": float(dv.max()),
        "tol_mean": tol_mean, "tol_var": tol_var,
        "passed": bool(dm.max() <= tol_mean and dv.max() <= tol_var),
    }
