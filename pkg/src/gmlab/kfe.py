"""Kolmogorov forward equation checks and a 1-D Fokker-Planck grid solver.

The KFE ``d/dt <p_t, f> = <p_t, L_t f>`` is tested observable by observable: the
left side by a central difference of the pairing in ``t`` on the analytic path,
the right side by Gauss-Hermite quadrature of ``L_t f`` against the time-``t``
mixture law.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .analytic import MarginalLaw
from .errors import ConfigError, ValidationError
from .generator import ContinuousGenerator, TestFunction, superpose
from .schedule import DELTA

H_T = 1e-4
KFE_TOL = 1e-3
GH_MIN_NODES = {1: 160, 2: 80, 3: 20}
GH_MAX_NODES = {1: 600, 2: 300, 3: 40}
# largest node spacing (x units) allowed near a component's centre; the narrowest
# feature in the built-in battery is a width-0.7 bump
GH_SPACING = 0.4
GH_PRUNE = 1e-22
CFL = 0.4


@dataclass
class DensityGrid:
    """Density values on the uniform node grid ``linspace(lo, hi, n)`` at time ``t``."""

    lo: float
    hi: float
    n: int
    values: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValidationError(f"density grid expects {self.n} values, got {self.values.shape}")
        if np.any(self.values < 0):
            raise ValidationError("density values must be nonnegative")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    def mass(self) -> float:
        return float(np.trapezoid(self.values, dx=self.dx))

    def moments(self) -> tuple[float, float]:
        x = self.x
        m = self.mass()
        mean = float(np.trapezoid(x * self.values, dx=self.dx)) / m
        var = float(np.trapezoid((x - mean) ** 2 * self.values, dx=self.dx)) / m
        return mean, var

    @classmethod
    def from_law(cls, law: MarginalLaw, lo: float = -8.0, hi: float = 8.0, n: int = 801):
        if law.dim != 1:
            raise ValidationError("density grids are 1-D only")
        x = np.linspace(lo, hi, n)
        return cls(lo, hi, n, law.density(x[:, None]), t=law.t)


# --------------------------------------------------------------------------- pairing

@lru_cache(maxsize=64)
def _gauss_hermite(dim: int, n: int):
    xi, w = hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([xi] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(nodes.shape[0])
    for wg in np.meshgrid(*([w] * dim), indexing="ij"):
        weights = weights * wg.ravel()
    keep = weights > GH_PRUNE * weights.max()
    return nodes[keep], weights[keep]


def _node_count(dim: int, sd: float) -> int:
    # central Gauss-Hermite spacing is about pi * sd / sqrt(2 n)
    need = int(math.ceil(0.5 * (math.pi * sd / GH_SPACING) ** 2))
    lo, hi = GH_MIN_NODES.get(dim, 10), GH_MAX_NODES.get(dim, 24)
    return int(min(max(need, lo), hi))


def pairing(p, f: TestFunction | Callable[[np.ndarray], np.ndarray],
            n_nodes: int | None = None) -> float:
    """``<p, f> = E_{x ~ p}[f(x)]`` for a :class:`DensityGrid` or a :class:`MarginalLaw`.

    Mixture laws use tensor Gauss-Hermite per component; the order grows with the
    component's spread unless ``n_nodes`` pins it.
    """
    if isinstance(p, DensityGrid):
        mass = p.mass()
        if abs(mass - 1.0) > 1e-2:
            raise ValidationError(f"density not normalised: mass {mass}")
        vals = f(p.x[:, None])
        return float(np.trapezoid(vals * p.values, dx=p.dx))
    if isinstance(p, MarginalLaw):
        sds = np.sqrt(p.variances)
        counts = [n_nodes or _node_count(p.dim, float(sd)) for sd in sds]
        pts, wts = [], []
        for w_k, m_k, sd, n in zip(p.weights, p.means, sds, counts):
            nodes, weights = _gauss_hermite(p.dim, n)
            pts.append(m_k[None, :] + sd * nodes)
            wts.append(w_k * weights)
        vals = np.asarray(f(np.concatenate(pts)), dtype=float)
        return float(vals @ np.concatenate(wts))
    raise TypeError(f"cannot pair against {type(p).__name__}")


# --------------------------------------------------------------------------- KFE residuals

def kfe_terms(path, gen, f: TestFunction, t: float, h_t: float = H_T) -> tuple[float, float]:
    """``(d/dt <p_t, f>, <p_t, L_t f>)`` for an analytic path."""
    if not DELTA < t < 1.0 - DELTA:
        raise ValidationError(f"KFE checks need t in ({DELTA}, {1 - DELTA}), got {t}")
    lhs = (pairing(path.law(t + h_t), f) - pairing(path.law(t - h_t), f)) / (2.0 * h_t)
    rhs = pairing(path.law(t), lambda x: gen.apply(f, x, t))
    return lhs, rhs


def kfe_residual(path, gen, f: TestFunction, t: float, h_t: float = H_T) -> float:
    lhs, rhs = kfe_terms(path, gen, f, t, h_t)
    return abs(lhs - rhs)


@dataclass
class KfeReport:
    residuals: list            # [(f_name, t, residual), ...]
    threshold: float = KFE_TOL
    meta: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max((r for _, _, r in self.residuals), default=0.0)

    @property
    def verified(self) -> bool:
        return self.max_residual < self.threshold

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "threshold": self.threshold,
            "verified": self.verified,
            "residuals": [{"f_name": n, "t": t, "residual": r} for n, t, r in self.residuals],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f_name", "t", "residual"])
        for n, t, r in self.residuals:
            w.writerow([n, repr(float(t)), repr(float(r))])
        return buf.getvalue()


def verify_kfe(path, gen, fns: Sequence[TestFunction], times: Iterable[float],
               threshold: float = KFE_TOL, h_t: float = H_T, meta: dict | None = None) -> KfeReport:
    rows = [(f.name, float(t), kfe_residual(path, gen, f, float(t), h_t))
            for t in times for f in fns]
    return KfeReport(rows, threshold, dict(meta or {}, generator=getattr(gen, "name", "?"), h_t=h_t))


def superposition_marginal_check(gen_a, gen_b, a: float, b: float, path,
                                 f_battery: Sequence[TestFunction], t_grid: Iterable[float],
                                 tol: float = KFE_TOL) -> KfeReport:
    """Residuals of ``a L_A + b L_B`` on ``path``; part-wise preconditions are reported, not raised."""
    t_grid = [float(t) for t in t_grid]
    solo_a = verify_kfe(path, gen_a, f_battery, t_grid, tol)
    solo_b = verify_kfe(path, gen_b, f_battery, t_grid, tol)
    mix = superpose([(a, gen_a), (b, gen_b)])
    report = verify_kfe(path, mix, f_battery, t_grid, tol)
    report.meta.update({
        "linearity_error": superposition_linearity(gen_a, gen_b, a, b, path, f_battery, t_grid),
        "weights": [a, b],
        "parts": [gen_a.name, gen_b.name],
        "part_max_residuals": [solo_a.max_residual, solo_b.max_residual],
        "precondition_ok": solo_a.verified and solo_b.verified,
    })
    return report


def superposition_linearity(gen_a, gen_b, a: float, b: float, path,
                            f_battery: Sequence[TestFunction], t_grid: Iterable[float]) -> float:
    """Max over (f, t) of ``|r_mix - (a r_A + b r_B)| / max(|rhs_A|, |rhs_B|, 1)`` on signed residuals.

    The unit floor keeps round-off in near-zero right-hand sides from reading as nonlinearity.
    """
    mix = superpose([(a, gen_a), (b, gen_b)])
    worst = 0.0
    for t in t_grid:
        for f in f_battery:
            lhs, ra = kfe_terms(path, gen_a, f, float(t))
            _, rb = kfe_terms(path, gen_b, f, float(t))
            _, rm = kfe_terms(path, mix, f, float(t))
            signed_mix = lhs - rm
            combo = a * (lhs - ra) + b * (lhs - rb)
            scale = max(abs(ra), abs(rb), 1.0)
            worst = max(worst, abs(signed_mix - combo) / scale)
    return worst


# --------------------------------------------------------------------------- Fokker-Planck

def _interfaces(grid: DensityGrid) -> np.ndarray:
    x = grid.x
    return 0.5 * (x[:-1] + x[1:])


def fokker_planck_evolve(p0: DensityGrid, gen: ContinuousGenerator, t0: float, t1: float,
                         n_steps: int, cfl: float = CFL) -> DensityGrid:
    """Explicit finite-volume evolution of ``dp/dt = -d(u p)/dx + 1/2 d^2(sigma^2 p)/dx^2``.

    Upwind fluxes for transport, central differences for diffusion, zero flux at the
    walls (so the discrete mass ``h * sum(p)`` is conserved to round-off).  Negative
    values are clamped to zero and the clamped mass is recorded in ``meta``.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    h = p0.dx
    dt = (t1 - t0) / n_steps
    if dt <= 0:
        raise ConfigError("fokker_planck_evolve needs t1 > t0")
    x = p0.x[:, None]
    xm = _interfaces(p0)[:, None]
    p = p0.values.copy()
    mass0 = h * p.sum()
    clamped = 0.0
    for k in range(n_steps):
        t = t0 + k * dt
        u = gen.drift(xm, t)[:, 0] if gen.velocity is not None else np.zeros(len(xm))
        s2 = gen.sigma(x, t) ** 2 if gen.diffusion is not None else np.zeros(len(x))
        umax = float(np.max(np.abs(u))) if u.size else 0.0
        s2max = float(np.max(s2)) if s2.size else 0.0
        limit = math.inf
        if umax > 0:
            limit = min(limit, cfl * h / umax)
        if s2max > 0:
            limit = min(limit, cfl * h * h / s2max)
        if dt > limit * (1 + 1e-12):
            suggested = int(math.ceil(n_steps * dt / limit * 1.1))
            raise ConfigError(
                f"CFL violated at t={t:.4g}: dt={dt:.3g} > {limit:.3g}; "
                f"use at least n_steps={suggested}")
        flux = np.maximum(u, 0.0) * p[:-1] + np.minimum(u, 0.0) * p[1:]
        flux -= 0.5 * (s2[1:] * p[1:] - s2[:-1] * p[:-1]) / h
        div = np.zeros_like(p)
        div[:-1] += flux
        div[1:] -= flux
        p = p - dt / h * div
        neg = p < 0
        if np.any(neg):
            clamped += float(-h * p[neg].sum())
            p[neg] = 0.0
    mass1 = h * p.sum()
    meta = {
        "n_steps": n_steps,
        "dt": dt,
        "clamped_mass": clamped,
        "mass_drift": float(mass1 - mass0),
        "mass_drift_per_unit_time": float(abs(mass1 - mass0) / (t1 - t0)),
    }
    return DensityGrid(p0.lo, p0.hi, p0.n, p, t=t1, meta=meta)


def stable_steps(grid: DensityGrid, gen: ContinuousGenerator, t0: float, t1: float,
                 cfl: float = CFL, n_probe: int = 33) -> int:
    """Smallest step count meeting the CFL bounds at ``n_probe`` probe times (10% margin)."""
    h = grid.dx
    x = grid.x[:, None]
    xm = _interfaces(grid)[:, None]
    worst = 0.0
    for t in np.linspace(t0, t1, n_probe):
        if gen.velocity is not None:
            worst = max(worst, float(np.max(np.abs(gen.drift(xm, t)))) / (cfl * h))
        if gen.diffusion is not None:
            worst = max(worst, float(np.max(gen.sigma(x, t) ** 2)) / (cfl * h * h))
    return max(1, int(math.ceil((t1 - t0) * worst * 1.1)))
