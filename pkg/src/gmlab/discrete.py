"""Jump processes on finite state spaces.

Rate convention: ``rates[x, y]`` is the rate of jumping FROM ``x`` TO ``y``; the
marginals obey the master equation ``dp/dt = Q^T p``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, SingularityError, ValidationError
from .rng import run_blocks

log = logging.getLogger(__name__)

DELTA = 1e-3
ROW_TOL = 1e-12


@dataclass(frozen=True)
class RateMatrix:
    rates: np.ndarray

    def __post_init__(self):
        q = np.array(self.rates, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValidationError(f"rate matrix must be square, got shape {q.shape}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ValidationError("off-diagonal rates must be nonnegative")
        if np.any(np.abs(q.sum(axis=1)) > ROW_TOL * max(1.0, float(np.abs(q).max()))):
            raise ValidationError("rate matrix rows must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "rates", q)

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    @classmethod
    def from_offdiagonal(cls, off) -> "RateMatrix":
        off = np.array(off, dtype=float)
        np.fill_diagonal(off, 0.0)
        np.fill_diagonal(off, -off.sum(axis=1))
        return cls(off)

    @classmethod
    def zeros(cls, n: int) -> "RateMatrix":
        return cls(np.zeros((n, n)))


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"not a probability vector: {p}")
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDistribution":
        return cls(np.full(n, 1.0 / n))


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


# --------------------------------------------------------------------------- kappa schedules

def kappa_linear():
    return (lambda t: t, lambda t: 1.0)


def kappa_cosine():
    return (lambda t: 0.5 * (1.0 - math.cos(math.pi * t)),
            lambda t: 0.5 * math.pi * math.sin(math.pi * t))


KAPPAS = {"linear": kappa_linear, "cosine": kappa_cosine}


@dataclass(frozen=True)
class MixturePath:
    """``p_t(x | z) = (1 - kappa_t) p0(x) + kappa_t [x = z]``."""

    kappa: Callable[[float], float]
    kappa_dot: Callable[[float], float]
    p0: DiscreteDistribution
    z: int
    kappa_name: str = "linear"

    def __post_init__(self):
        if not 0 <= self.z < self.p0.n:
            raise ValidationError(f"target state {self.z} outside 0..{self.p0.n - 1}")

    @classmethod
    def build(cls, n: int, z: int, kappa: str = "linear", p0=None) -> "MixturePath":
        if kappa not in KAPPAS:
            raise ConfigError(f"unknown kappa {kappa!r}; expected one of {sorted(KAPPAS)}")
        k, kd = KAPPAS[kappa]()
        p0 = DiscreteDistribution.uniform(n) if p0 is None else DiscreteDistribution(p0)
        return cls(k, kd, p0, int(z), kappa)

    @property
    def n(self) -> int:
        return self.p0.n

    def probs(self, t: float) -> np.ndarray:
        k = self.kappa(t)
        p = (1.0 - k) * self.p0.probs
        p[self.z] += k
        return p

    def probs_dot(self, t: float) -> np.ndarray:
        kd = self.kappa_dot(t)
        p = -kd * self.p0.probs
        p[self.z] += kd
        return p

    def jump_rate(self, t: float) -> float:
        k = self.kappa(t)
        if k >= 1.0 - 1e-9:
            raise SingularityError(f"kappa({t}) = {k} is too close to 1; rates diverge")
        return self.kappa_dot(t) / (1.0 - k)


def conditional_rates(path: MixturePath, t: float) -> RateMatrix:
    """Every ``x != z`` jumps to ``z`` at rate ``kappa_dot / (1 - kappa)``; nothing else moves."""
    lam = path.jump_rate(t)
    off = np.zeros((path.n, path.n))
    off[:, path.z] = lam
    return RateMatrix.from_offdiagonal(off)


class TimeRates:
    """Time-dependent rate matrix ``t -> Q_t`` with an optional closed-form rate bound."""

    def __init__(self, fn: Callable[[float], RateMatrix], n: int,
                 bound: Callable[[float, float], float] | None = None, constant: bool = False,
                 rows: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None):
        self.fn = fn
        self.n = n
        self._bound = bound
        self.constant = constant
        self._rows = rows

    def rows(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Rate rows ``Q_{t_i}[x_i, :]`` for paired arrays of times and states."""
        if self._rows is not None:
            return self._rows(times, states)
        return np.stack([self.fn(float(t)).rates[x] for t, x in zip(times, states)])

    def __call__(self, t: float) -> RateMatrix:
        return self.fn(t)

    def rate_bound(self, t0: float, t1: float) -> float:
        """Upper bound on the total exit rate over ``[t0, t1]``."""
        if self._bound is not None:
            return self._bound(t0, t1)
        probe = np.linspace(t0, t1, 1025)
        exit_max = max(float(np.max(-np.diag(self.fn(float(t)).rates))) for t in probe)
        return 1.5 * exit_max

    @classmethod
    def fixed(cls, q: RateMatrix) -> "TimeRates":
        ex = float(np.max(-np.diag(q.rates))) if q.n else 0.0
        return cls(lambda t: q, q.n, bound=lambda a, b: ex, constant=True,
                   rows=lambda ts, xs: q.rates[xs])

    @classmethod
    def mixture(cls, path: MixturePath) -> "TimeRates":
        def bound(t0, t1):
            if path.kappa_name == "linear":
                return path.jump_rate(t1)
            probe = np.linspace(t0, t1, 1025)
            return 1.5 * max(path.jump_rate(float(t)) for t in probe)

        def rows(ts, xs):
            lam = np.array([path.jump_rate(float(t)) for t in ts])
            out = np.zeros((len(xs), path.n))
            out[:, path.z] = lam
            out[np.arange(len(xs)), xs] -= lam
            return out
        return cls(lambda t: conditional_rates(path, t), path.n, bound=bound, rows=rows)

    @classmethod
    def superposed(cls, parts) -> "TimeRates":
        """Fixed-weight combination ``sum w_i Q_i``; weights >= 0 summing to 1."""
        parts = [(float(w), r) for w, r in parts]
        ws = np.array([w for w, _ in parts])
        if np.any(ws < 0) or abs(ws.sum() - 1.0) > 1e-12:
            raise ValidationError(f"superposition weights must be >= 0 and sum to 1, got {ws.tolist()}")
        n = parts[0][1].n

        def fn(t):
            return RateMatrix(sum(w * r(t).rates for w, r in parts))

        def bound(t0, t1):
            return sum(w * r.rate_bound(t0, t1) for w, r in parts)

        def rows(ts, xs):
            return sum(w * r.rows(ts, xs) for w, r in parts)
        return cls(fn, n, bound=bound, rows=rows)


def marginal_rates(paths, weights) -> TimeRates:
    """Rates generating the mixed path ``sum_i w_i p_t(. | z_i)``.

    Each conditional generator is weighted by its posterior ``w_i p_t(x | z_i) / p_t(x)``
    at the departure state.  A fixed-weight sum is exact only when every part shares
    ``kappa`` and ``p0``; otherwise it drifts off the mixed marginals.
    """
    w = np.asarray(weights, dtype=float)
    if len(paths) != len(w) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError(f"mixture weights must be >= 0 and sum to 1, got {w.tolist()}")
    n = paths[0].n

    def posterior(t):
        cond = np.stack([p.probs(t) for p in paths])          # (m, n)
        joint = w[:, None] * cond
        return joint / joint.sum(axis=0, keepdims=True)

    def fn(t):
        post = posterior(t)
        q = sum(post[i][:, None] * conditional_rates(p, t).rates for i, p in enumerate(paths))
        return RateMatrix(q)

    def rows(ts, xs):
        out = np.zeros((len(xs), n))
        for j, (t, x) in enumerate(zip(ts, xs)):
            post = posterior(float(t))[:, x]
            for i, p in enumerate(paths):
                lam = post[i] * p.jump_rate(float(t))
                out[j, p.z] += lam
                out[j, x] -= lam
        return out

    def bound(t0, t1):
        return max(TimeRates.mixture(p).rate_bound(t0, t1) for p in paths)

    return TimeRates(fn, n, bound=bound, rows=rows)


def mixed_path_probs(paths, weights, t: float) -> np.ndarray:
    return sum(float(w) * p.probs(t) for w, p in zip(weights, paths))


def apply_jump_generator(Q: RateMatrix, f, x: int) -> float:
    """``sum_{y != x} Q(y; x) (f(y) - f(x))``."""
    f = np.asarray(f, dtype=float)
    row = Q.rates[x]
    mask = np.arange(Q.n) != x
    return float(np.sum(row[mask] * (f[mask] - f[x])))


def clamp_horizon(t1: float, delta: float = DELTA) -> float:
    if t1 > 1.0 - delta:
        log.warning("horizon t1=%g clamped to %g (rates diverge at t=1)", t1, 1.0 - delta)
        return 1.0 - delta
    return t1


# --------------------------------------------------------------------------- master equation

@dataclass
class MasterSolution:
    dist: DiscreteDistribution
    renormalization_drift: float
    n_steps: int
    method: str


def master_equation_solve(q_of_t: TimeRates | RateMatrix, p0: DiscreteDistribution, t0: float,
                          t1: float, n_steps: int | None = None) -> MasterSolution:
    """Evolve ``dp/dt = Q_t^T p`` from ``t0`` to ``t1``.

    Constant rates use the matrix exponential (scaling and squaring); time-dependent
    rates use explicit Euler with ``h * max|diag| < 0.5``.  The result is renormalised
    and the size of that correction is reported.
    """
    if isinstance(q_of_t, RateMatrix):
        q_of_t = TimeRates.fixed(q_of_t)
    p = p0.probs.copy()
    if t1 < t0:
        raise ConfigError("master_equation_solve needs t1 >= t0")
    if q_of_t.constant:
        q = q_of_t(t0).rates
        p = expm((t1 - t0) * q.T) @ p
        method, steps = "expm", 0
    else:
        if n_steps is None:
            bound = q_of_t.rate_bound(t0, t1)
            n_steps = max(1, int(math.ceil((t1 - t0) * max(bound, 1.0) * 100)))
        h = (t1 - t0) / n_steps
        for k in range(n_steps):
            q = q_of_t(t0 + k * h).rates
            if h * float(np.max(np.abs(np.diag(q)))) >= 0.5:
                raise ConfigError(
                    f"explicit Euler unstable at t={t0 + k * h:.4g}: h*max|diag|>=0.5; "
                    "increase n_steps")
            p = p + h * (q.T @ p)
        method, steps = "euler", n_steps
    total = p.sum()
    drift = abs(total - 1.0)
    p = np.clip(p / total, 0.0, None)
    p = p / p.sum()
    return MasterSolution(DiscreteDistribution(p), float(drift), steps, method)


# --------------------------------------------------------------------------- simulation

SCHEMES = ("exact_clock", "euler_h")


def _jump(rng, q_rows: np.ndarray, states: np.ndarray, accept_scale: np.ndarray | None = None):
    """Pick destinations for each run given its current row of rates (diagonal ignored)."""
    rows = q_rows.copy()
    rows[np.arange(len(states)), states] = 0.0
    total = rows.sum(axis=1)
    u = rng.random(len(states))
    cum = np.cumsum(rows, axis=1)
    target = u * (total if accept_scale is None else accept_scale)
    dest = (cum <= target[:, None]).sum(axis=1)
    moved = dest < rows.shape[1]
    return np.where(moved, np.minimum(dest, rows.shape[1] - 1), states), moved


def ctmc_simulate(q_of_t: TimeRates | RateMatrix, x0: int | DiscreteDistribution, t0: float, t1: float, seed: int,
                  scheme: str = "exact_clock", n_runs: int = 1, h: float = 1e-3,
                  threads: int = 1) -> np.ndarray:
    """Terminal states of ``n_runs`` independent chains started at ``x0`` (a state or a law).

    ``exact_clock`` thins a Poisson clock of rate ``q_of_t.rate_bound(t0, t1)``;
    ``euler_h`` jumps with probability ``h * Q(y; x)`` per step of length ``h``.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if isinstance(q_of_t, RateMatrix):
        q_of_t = TimeRates.fixed(q_of_t)
    if t1 > 1.0 - DELTA and not q_of_t.constant:
        raise ConfigError(f"time-dependent rates need t1 <= {1 - DELTA}; got {t1}")
    bound = q_of_t.rate_bound(t0, t1)
    if not math.isfinite(bound):
        raise ConfigError("rates unbounded on the horizon")

    def initial(m, rng):
        if isinstance(x0, DiscreteDistribution):
            return rng.choice(x0.n, size=m, p=x0.probs)
        return np.full(m, int(x0))

    def exact(start, stop, rng):
        m = stop - start
        state = initial(m, rng)
        t = np.full(m, float(t0))
        active = np.ones(m, dtype=bool)
        if bound <= 0:
            return state
        while np.any(active):
            idx = np.flatnonzero(active)
            t[idx] += rng.exponential(1.0 / bound, size=idx.size)
            done = t[idx] > t1
            active[idx[done]] = False
            idx = idx[~done]
            if idx.size == 0:
                break
            rows = q_of_t.rows(t[idx], state[idx])
            new, _ = _jump(rng, rows, state[idx], accept_scale=np.full(idx.size, bound))
            state[idx] = new
        return state

    def euler(start, stop, rng):
        m = stop - start
        state = initial(m, rng)
        n_steps = max(1, int(math.ceil((t1 - t0) / h)))
        step = (t1 - t0) / n_steps
        if step * bound >= 1.0:
            raise ConfigError(f"euler_h needs h * max rate < 1, got {step * bound:.3g}")
        for k in range(n_steps):
            q = q_of_t(t0 + k * step).rates
            rows = step * q[state]
            new, _ = _jump(rng, rows, state, accept_scale=np.ones(m))
            state = new
        return state

    fn = exact if scheme == "exact_clock" else euler
    return np.concatenate(run_blocks(fn, n_runs, seed, "ctmc", threads))


def histogram(states: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(states, minlength=n) / len(states)


def multinomial_band(p, n_runs: int, k: float = 3.0) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return k * np.sqrt(p * (1 - p) / n_runs)
