"""Closed-form oracle for isotropic Gaussian-mixture data under ``z_t = alpha_t x + sigma_t eps``.

At time ``t`` component ``k`` of the data mixture becomes
``N(alpha_t mu_k, (alpha_t^2 v_k + sigma_t^2) I)`` with unchanged weight, so densities,
scores, posteriors and the marginal velocity are all available in closed form.
Every function here accepts a batch of points ``x`` of shape ``(n, d)`` (a single
point of shape ``(d,)`` is promoted and the result squeezed back).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, EvaluationError, ValidationError
from .schedule import NoiseSchedule

UNDERFLOW = 1e-300
LOG_UNDERFLOW = math.log(UNDERFLOW)


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape[0] == m.shape[0] == v.shape[0]):
            raise ValidationError("weights, means and variances must have one entry per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must be positive and sum to 1, got {w}")
        if np.any(v <= 0):
            raise ValidationError(f"component variances must be positive, got {v}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        d = self.dim
        cov = np.zeros((d, d))
        for w, m, v in zip(self.weights, self.means, self.variances):
            cov += w * (v * np.eye(d) + np.outer(m - mu, m - mu))
        return cov

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * noise

    @classmethod
    def standard(cls, dim: int = 1) -> "GaussianMixture":
        return cls(np.ones(1), np.zeros((1, dim)), np.ones(1))

    @classmethod
    def from_config(cls, components: Sequence[dict]) -> "GaussianMixture":
        """Build from ``[{"weight": w, "mean": [...], "variance": v}, ...]``."""
        if not components:
            raise ConfigError("mixture needs at least one component")
        ws, ms, vs = [], [], []
        for i, comp in enumerate(components):
            extra = set(comp) - {"weight", "mean", "variance"}
            if extra:
                raise ConfigError(f"mixture component {i}: unknown keys {sorted(extra)}")
            try:
                ws.append(float(comp["weight"]))
                ms.append(np.atleast_1d(np.asarray(comp["mean"], dtype=float)))
                vs.append(float(comp["variance"]))
            except KeyError as exc:
                raise ConfigError(f"mixture component {i}: missing {exc}") from None
        if len({m.shape for m in ms}) != 1:
            raise ConfigError("mixture component means must share one dimension")
        try:
            return cls(np.array(ws), np.stack(ms), np.array(vs))
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None

    def to_config(self) -> list:
        return [{"weight": float(w), "mean": m.tolist(), "variance": float(v)}
                for w, m, v in zip(self.weights, self.means, self.variances)]


@dataclass(frozen=True)
class MarginalLaw:
    """The time-``t`` law: same weights, means ``alpha mu_k``, variances ``alpha^2 v_k + sigma^2``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    t: float

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_components(self, x: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x; m_k, s_k^2 I)``, shape ``(n, K)``."""
        d = self.dim
        diff2 = np.sum((x[:, None, :] - self.means[None, :, :]) ** 2, axis=-1)
        return (np.log(self.weights)[None, :]
                - 0.5 * diff2 / self.variances[None, :]
                - 0.5 * d * np.log(2 * np.pi * self.variances)[None, :])

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.log_components(x), axis=1)

    def density(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(x))

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        lc = self.log_components(x)
        lse = logsumexp(lc, axis=1, keepdims=True)
        if np.any(lse < LOG_UNDERFLOW):
            bad = int(np.argmin(lse))
            raise EvaluationError(
                f"marginal density underflows (< {UNDERFLOW:g}) at probe {x[bad]}; "
                "move the probe closer to the data")
        return np.exp(lc - lse)

    def score(self, x: np.ndarray) -> np.ndarray:
        w = self.responsibilities(x)
        per = -(x[:, None, :] - self.means[None, :, :]) / self.variances[None, :, None]
        return np.einsum("nk,nkd->nd", w, per)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * rng.standard_normal((n, self.dim))


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def marginal_law(gm: GaussianMixture, ns: NoiseSchedule, t: float) -> MarginalLaw:
    a = float(ns.alpha(t))
    s = float(ns.sigma(t))
    return MarginalLaw(gm.weights, a * gm.means, a * a * gm.variances + s * s, float(t))


def marginal_density(gm: GaussianMixture, ns: NoiseSchedule, x, t: float):
    xb, single = _batch(x)
    out = marginal_law(gm, ns, t).density(xb)
    return out[0] if single else out


def score(gm: GaussianMixture, ns: NoiseSchedule, x, t: float):
    """Gradient of the log marginal density."""
    xb, single = _batch(x)
    out = marginal_law(gm, ns, t).score(xb)
    return out[0] if single else out


def posterior_weights(gm: GaussianMixture, ns: NoiseSchedule, x, t: float):
    """Component responsibilities given ``z_t = x`` (computed in log space)."""
    xb, single = _batch(x)
    out = marginal_law(gm, ns, t).responsibilities(xb)
    return out[0] if single else out


def component_posterior_means(gm: GaussianMixture, ns: NoiseSchedule, x: np.ndarray, t: float):
    """Per-component ``E[x0 | z_t = x, k]`` and ``E[eps | z_t = x, k]``, each ``(n, K, d)``."""
    a = float(ns.alpha(t))
    s = float(ns.sigma(t))
    var_t = a * a * gm.variances + s * s
    resid = x[:, None, :] - a * gm.means[None, :, :]
    x0 = gm.means[None, :, :] + (a * gm.variances / var_t)[None, :, None] * resid
    eps = (s / var_t)[None, :, None] * resid
    return x0, eps


def conditional_velocity(gm: GaussianMixture, ns: NoiseSchedule, x, t: float, k: int):
    """Velocity of the component-``k`` conditional path, ``E[alpha_dot x0 + sigma_dot eps | z_t=x, k]``."""
    xb, single = _batch(x)
    x0, eps = component_posterior_means(gm, ns, xb, t)
    out = float(ns.alpha_dot(t)) * x0[:, k] + float(ns.sigma_dot(t)) * eps[:, k]
    return out[0] if single else out


def denoiser(gm: GaussianMixture, ns: NoiseSchedule, x, t: float):
    """Posterior mean ``E[x0 | z_t = x]``."""
    xb, single = _batch(x)
    w = posterior_weights(gm, ns, xb, t)
    x0, _ = component_posterior_means(gm, ns, xb, t)
    out = np.einsum("nk,nkd->nd", w, x0)
    return out[0] if single else out


def marginal_velocity(gm: GaussianMixture, ns: NoiseSchedule, x, t: float):
    """``u_t(x) = alpha_dot E[x0|z_t=x] + sigma_dot E[eps|z_t=x]``."""
    xb, single = _batch(x)
    w = posterior_weights(gm, ns, xb, t)
    x0, eps = component_posterior_means(gm, ns, xb, t)
    per = float(ns.alpha_dot(t)) * x0 + float(ns.sigma_dot(t)) * eps
    out = np.einsum("nk,nkd->nd", w, per)
    return out[0] if single else out


def velocity_from_score(ns: NoiseSchedule, x, score_val, t: float):
    """``u = (alpha_dot/alpha) x - (sigma_dot sigma - (alpha_dot/alpha) sigma^2) * score``."""
    a = float(ns.alpha(t))
    s = float(ns.sigma(t))
    drift = float(ns.alpha_dot(t)) / a
    half_g2 = 0.5 * float(ns.sigma_sq_dot(t)) - drift * s * s
    return drift * np.asarray(x) - half_g2 * np.asarray(score_val)


@dataclass(frozen=True)
class GaussianPath:
    """The marginal path ``t -> p_t`` of a Gaussian mixture under a schedule.

    ``reverse=True`` reads the same path backwards in time (``p~_tau = p_{1 - tau}``),
    which is the frame in which generative samplers run.
    """

    gm: GaussianMixture
    ns: NoiseSchedule
    reverse: bool = False

    def _t(self, t: float) -> float:
        return 1.0 - t if self.reverse else t

    def law(self, t: float) -> MarginalLaw:
        return marginal_law(self.gm, self.ns, self._t(t))

    def velocity(self, x, t: float):
        u = marginal_velocity(self.gm, self.ns, x, self._t(t))
        return -u if self.reverse else u

    def score(self, x, t: float):
        return score(self.gm, self.ns, x, self._t(t))

    def reversed(self) -> "GaussianPath":
        return GaussianPath(self.gm, self.ns, not self.reverse)

    @property
    def dim(self) -> int:
        return self.gm.dim
