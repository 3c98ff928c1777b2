"""Noise schedules and the conversions between the two ways of writing them.

A corruption process can be described by interpolation coefficients
``z_t = alpha_t x + sigma_t eps`` (:class:`NoiseSchedule`) or by the linear SDE
``dz = f_t z dt + g_t dW`` (:class:`DiffusionSchedule`).  Time runs from data
(``t = 0``) to noise (``t = 1``) everywhere in this package.

Forward direction (diffusion -> interpolation)::

    alpha_t   = exp(int_0^t f)
    sigma_t^2 = int_0^t g_r^2 exp(2 (A(t) - A(r))) dr,     A(r) = int_0^r f

Inverse direction (interpolation -> diffusion)::

    f_t   = alpha_dot / alpha
    g_t^2 = d(sigma^2)/dt - 2 f_t sigma_t^2
    eta_t = eps_t / g_t
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, DomainError, IntegrationError, ScheduleInconsistencyError

DELTA = 1e-3
QUAD_EPSABS = 1e-9
QUAD_EPSREL = 1e-11
CACHE_NODES = 1024

ScalarFn = Callable[[float], float]


@dataclass(frozen=True)
class NoiseSchedule:
    """Interpolation schedule ``(alpha_t, sigma_t)`` with analytic time derivatives.

    ``var_dot`` (the derivative of ``sigma^2``) is optional; schedules whose
    ``sigma_dot`` is singular at ``t = 0`` (variance preserving, variance
    exploding) supply it so the diffusion coefficient stays finite there.
    """

    name: str
    alpha: ScalarFn
    sigma: ScalarFn
    alpha_dot: ScalarFn
    sigma_dot: ScalarFn
    t_max: float = 1.0
    var_dot: ScalarFn | None = None

    def sigma_sq_dot(self, t):
        if self.var_dot is not None:
            return self.var_dot(t)
        return 2.0 * self.sigma(t) * self.sigma_dot(t)

    def check_domain(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > self.t_max + 1e-15):
            raise DomainError(
                f"schedule '{self.name}' is defined on [0, {self.t_max}], got t={t}"
            )

    @classmethod
    def from_functions(cls, name: str, alpha: ScalarFn, sigma: ScalarFn,
                       t_max: float = 1.0, h: float = 1e-4) -> "NoiseSchedule":
        """Build a schedule from ``alpha``/``sigma`` only; derivatives by 5-point differences."""
        return cls(name=name, alpha=alpha, sigma=sigma,
                   alpha_dot=_five_point(alpha, h), sigma_dot=_five_point(sigma, h),
                   t_max=t_max)


@dataclass(frozen=True)
class DiffusionSchedule:
    """SDE parameterisation ``(f_t, g_t)`` plus the inference-time churn ``eta_t``."""

    f: ScalarFn
    g: ScalarFn
    eta: ScalarFn = field(default=lambda t: 0.0 * np.asarray(t, dtype=float))
    name: str = "custom"
    t_max: float = 1.0

    def g2(self, t):
        return np.square(self.g(t))


@dataclass(frozen=True)
class StochasticityLevel:
    """Flow-side noise level ``eps_t``."""

    epsilon: ScalarFn

    @classmethod
    def constant(cls, value: float) -> "StochasticityLevel":
        if value < 0:
            raise ConfigError(f"stochasticity level must be >= 0, got {value}")
        return cls(lambda t, v=float(value): v + 0.0 * np.asarray(t, dtype=float))

    def __call__(self, t):
        return self.epsilon(t)


def _five_point(fn: ScalarFn, h: float) -> ScalarFn:
    def deriv(t):
        return (fn(t - 2 * h) - 8 * fn(t - h) + 8 * fn(t + h) - fn(t + 2 * h)) / (12 * h)
    return deriv


# --------------------------------------------------------------------------- built-ins

def flow_matching(delta: float = DELTA) -> NoiseSchedule:
    """Linear interpolation ``alpha = 1 - t``, ``sigma = t``; conversions stop at ``1 - delta``."""
    return NoiseSchedule(
        name="flow_matching",
        alpha=lambda t: 1.0 - np.asarray(t, dtype=float),
        sigma=lambda t: np.asarray(t, dtype=float) * 1.0,
        alpha_dot=lambda t: -1.0 + 0.0 * np.asarray(t, dtype=float),
        sigma_dot=lambda t: 1.0 + 0.0 * np.asarray(t, dtype=float),
        t_max=1.0 - delta,
    )


def variance_preserving(beta: float = 2.0) -> NoiseSchedule:
    """Constant-beta VP schedule: ``f = -beta/2``, ``g = sqrt(beta)``."""
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")

    def alpha(t):
        return np.exp(-0.5 * beta * np.asarray(t, dtype=float))

    def sigma(t):
        return np.sqrt(-np.expm1(-beta * np.asarray(t, dtype=float)))

    def var_dot(t):
        return beta * np.exp(-beta * np.asarray(t, dtype=float))

    def sigma_dot(t):
        with np.errstate(divide="ignore"):
            return var_dot(t) / (2.0 * sigma(t))

    return NoiseSchedule("variance_preserving", alpha, sigma,
                         lambda t: -0.5 * beta * alpha(t), sigma_dot,
                         t_max=1.0, var_dot=var_dot)


def variance_exploding(sigma_min: float = 0.02, sigma_max: float = 5.0) -> NoiseSchedule:
    """Geometric VE schedule shifted so that ``sigma(0) = 0``:
    ``sigma_t^2 = sigma_min^2 ((sigma_max/sigma_min)^(2t) - 1)``, ``alpha = 1``.
    """
    if not 0 < sigma_min < sigma_max:
        raise ConfigError("variance_exploding needs 0 < sigma_min < sigma_max")
    log_ratio = math.log(sigma_max / sigma_min)

    def var(t):
        return sigma_min ** 2 * np.expm1(2.0 * log_ratio * np.asarray(t, dtype=float))

    def var_dot(t):
        return 2.0 * log_ratio * sigma_min ** 2 * np.exp(2.0 * log_ratio * np.asarray(t, dtype=float))

    def sigma(t):
        return np.sqrt(var(t))

    def sigma_dot(t):
        with np.errstate(divide="ignore"):
            return var_dot(t) / (2.0 * sigma(t))

    return NoiseSchedule("variance_exploding",
                         lambda t: 1.0 + 0.0 * np.asarray(t, dtype=float), sigma,
                         lambda t: 0.0 * np.asarray(t, dtype=float), sigma_dot,
                         t_max=1.0, var_dot=var_dot)


def identity() -> NoiseSchedule:
    """No corruption at all: ``alpha = 1``, ``sigma = 0``."""
    one = lambda t: 1.0 + 0.0 * np.asarray(t, dtype=float)  # noqa: E731
    zero = lambda t: 0.0 * np.asarray(t, dtype=float)  # noqa: E731
    return NoiseSchedule("identity", one, zero, zero, zero, t_max=1.0)


def custom_tabulated(times: Sequence[float], alphas: Sequence[float],
                     sigmas: Sequence[float], name: str = "custom_tabulated") -> NoiseSchedule:
    """Schedule from ``(t, alpha, sigma)`` triples, monotone-cubic interpolated."""
    times = np.asarray(times, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if times.ndim != 1 or times.size < 2 or not (times.shape == alphas.shape == sigmas.shape):
        raise ConfigError("custom_tabulated needs equal-length arrays of at least 2 triples")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("custom_tabulated times must be strictly increasing")
    if times[0] != 0.0:
        raise ConfigError("custom_tabulated table must start at t = 0")
    if np.any(alphas <= 0) or np.any(sigmas < 0):
        raise ConfigError("custom_tabulated needs alpha > 0 and sigma >= 0")
    a = PchipInterpolator(times, alphas, extrapolate=True)
    s = PchipInterpolator(times, sigmas, extrapolate=True)
    da, ds = a.derivative(), s.derivative()
    return NoiseSchedule(name, a, s, da, ds, t_max=float(times[-1]))


BUILTIN = {
    "flow_matching": flow_matching,
    "variance_preserving": variance_preserving,
    "variance_exploding": variance_exploding,
    "identity": identity,
}


def from_config(cfg: dict) -> NoiseSchedule:
    """Build a schedule from ``{"kind": ..., parameters...}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind == "custom_tabulated":
        table = cfg.pop("table", None)
        if cfg:
            raise ConfigError(f"unknown schedule keys: {sorted(cfg)}")
        if not table:
            raise ConfigError("custom_tabulated needs a 'table' of [t, alpha, sigma] triples")
        arr = np.asarray(table, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ConfigError("custom_tabulated 'table' rows must be [t, alpha, sigma]")
        return custom_tabulated(arr[:, 0], arr[:, 1], arr[:, 2])
    if kind not in BUILTIN:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of "
                          f"{sorted(BUILTIN) + ['custom_tabulated']}")
    try:
        return BUILTIN[kind](**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for schedule {kind!r}: {exc}") from None


# --------------------------------------------------------------------------- quadrature

def _quad(fn: ScalarFn, a: float, b: float) -> float:
    if a == b:
        return 0.0

    def integrand(r):
        v = float(fn(r))
        if not math.isfinite(v):
            raise IntegrationError(f"non-finite integrand {v} at r={r}")
        return v

    val, abserr = integrate.quad(integrand, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                 limit=200)
    if not math.isfinite(val) or abserr > max(1e-6, 1e-6 * abs(val)):
        raise IntegrationError(f"quadrature on [{a}, {b}] failed: value={val}, error={abserr}")
    return val


class DriftIntegral:
    """Cached antiderivative ``A(r) = int_0^r f`` on ``[0, upper]``.

    Cumulative panel integrals live on a fixed node grid; a query completes the
    integral from the nearest node below with one short adaptive panel, so the
    cached value carries quadrature accuracy rather than interpolation error.
    """

    def __init__(self, f: ScalarFn, upper: float, n_nodes: int = CACHE_NODES):
        self.f = f
        self.upper = float(upper)
        self.nodes = np.linspace(0.0, self.upper, n_nodes)
        panels = [_quad(f, a, b) for a, b in zip(self.nodes[:-1], self.nodes[1:])]
        self.values = np.concatenate([[0.0], np.cumsum(panels)])

    def __call__(self, r: float) -> float:
        if r < 0 or r > self.upper * (1 + 1e-12):
            raise DomainError(f"drift integral cached on [0, {self.upper}], queried at {r}")
        k = int(np.clip(np.searchsorted(self.nodes, r, side="right") - 1, 0, len(self.nodes) - 1))
        return float(self.values[k] + _quad(self.f, float(self.nodes[k]), r))


# --------------------------------------------------------------------------- conversions

def alpha_from_drift(f: ScalarFn, t: float, drift_integral: DriftIntegral | None = None) -> float:
    """``alpha_t = exp(int_0^t f_r dr)``."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return 1.0
    a_t = drift_integral(t) if drift_integral is not None else _quad(f, 0.0, t)
    return math.exp(a_t)


def sigma_from_diffusion(f: ScalarFn, g: ScalarFn, t: float,
                         drift_integral: DriftIntegral | None = None) -> float:
    """Remaining noise level after evolving the linear SDE from 0 to ``t``.

    Computed as ``sqrt(int_0^t g_r^2 exp(2 (A(t) - A(r))) dr)``, i.e. the noise
    accumulated in drift-rescaled coordinates multiplied back by ``alpha_t``.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return 0.0
    A = drift_integral if drift_integral is not None else DriftIntegral(f, t)
    a_t = A(t)

    def integrand(r):
        return float(g(r)) ** 2 * math.exp(2.0 * (a_t - A(r)))

    var = _quad(integrand, 0.0, t)
    if var < 0.0:
        if var > -1e-12:
            return 0.0
        raise IntegrationError(f"negative variance {var} from quadrature at t={t}")
    return math.sqrt(var)


def epsilon_from_churn(ds: DiffusionSchedule, t):
    """``eps_t = eta_t * g_t``."""
    return ds.eta(t) * ds.g(t)


def diffusion_from_interpolation(ns: NoiseSchedule,
                                 eps: StochasticityLevel | None = None) -> DiffusionSchedule:
    """Invert the forward formulas: recover ``(f, g, eta)`` from ``(alpha, sigma, eps)``."""
    eps = eps if eps is not None else StochasticityLevel.constant(0.0)

    def f(t):
        ns.check_domain(t)
        a = ns.alpha(t)
        if np.any(np.asarray(a) <= 0.0):
            raise DomainError(f"alpha must be positive for the drift, got alpha({t})={a}")
        return ns.alpha_dot(t) / a

    def g2(t):
        val = ns.sigma_sq_dot(t) - 2.0 * f(t) * np.square(ns.sigma(t))
        if np.any(np.asarray(val) < -1e-12):
            raise ScheduleInconsistencyError(
                f"schedule '{ns.name}' implies g^2 = {val} < 0 at t={t}")
        return np.maximum(val, 0.0)

    def g(t):
        return np.sqrt(g2(t))

    def eta(t):
        gt = g(t)
        e = eps(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(gt > 0.0, e / np.where(gt > 0.0, gt, 1.0), 0.0)

    return DiffusionSchedule(f=f, g=g, eta=eta, name=f"{ns.name}:diffusion", t_max=ns.t_max)


def interpolation_from_diffusion(ds: DiffusionSchedule, times: Sequence[float]):
    """Tabulate ``(alpha_t, sigma_t)`` for a diffusion schedule on the given times."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return times, times.copy(), times.copy()
    upper = float(times.max())
    A = DriftIntegral(ds.f, upper) if upper > 0 else None
    alphas = np.array([alpha_from_drift(ds.f, float(t), A) for t in times])
    sigmas = np.array([sigma_from_diffusion(ds.f, ds.g, float(t), A) for t in times])
    return times, alphas, sigmas


def round_trip_check(ns: NoiseSchedule, t_grid: Sequence[float]) -> float:
    """Max over the grid of ``|alpha - alpha_hat| + |sigma - sigma_hat|`` after
    converting ``ns`` to its diffusion form and back by quadrature."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(t_grid > min(0.99, ns.t_max)):
        raise DomainError(f"round-trip grid must lie in [0, {min(0.99, ns.t_max)}]")
    ds = diffusion_from_interpolation(ns)
    _, alphas, sigmas = interpolation_from_diffusion(ds, t_grid)
    err = np.abs(alphas - ns.alpha(t_grid)) + np.abs(sigmas - ns.sigma(t_grid))
    return float(np.max(err)) if err.size else 0.0
