"""Conditional generator-matching training of a velocity (or clean-data) head.

Each sample draws ``t ~ U[delta, 1 - delta]``, a data point ``z`` and noise ``eps``,
forms ``x = alpha_t z + sigma_t eps`` and regresses the network onto the conditional
target ``alpha_dot z + sigma_dot eps`` (velocity head) or ``z`` (x-prediction head)
under a Bregman divergence.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import analytic, rng as rngmod
from .analytic import GaussianMixture, MarginalLaw
from .data import DatasetSpec, generate
from .errors import ConfigError, EvaluationError, TrainingDivergedError, ValidationError
from .nn import Adam, Mlp, time_features
from .sampler import FieldSource, SamplerConfig, sample
from .schedule import BUILTIN, DELTA, NoiseSchedule

HEADS = ("velocity", "x_prediction")
DIVERGE_AT = 1e6
PROBE_TIMES = tuple(round(0.1 * k, 1) for k in range(1, 10))


# --------------------------------------------------------------------------- Bregman divergences

@dataclass(frozen=True)
class BregmanDivergence:
    """``D(a, b) = phi(a) - phi(b) - <a - b, grad phi(b)>``, rows of ``a`` and ``b`` paired."""

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    grad_phi: Callable[[np.ndarray], np.ndarray]
    hess_vec: Callable[[np.ndarray, np.ndarray], np.ndarray]   # (b, v) -> H_phi(b) v

    def grad_b(self, a, b):
        """``dD/db = -H_phi(b) (a - b)``."""
        return -self.hess_vec(b, a - b)


def quadratic() -> BregmanDivergence:
    return BregmanDivergence(
        "quadratic",
        lambda x: np.sum(x * x, axis=-1),
        lambda x: 2.0 * x,
        lambda b, v: 2.0 * v,
    )


def exponential() -> BregmanDivergence:
    return BregmanDivergence(
        "exp",
        lambda x: np.sum(np.exp(x), axis=-1),
        np.exp,
        lambda b, v: np.exp(b) * v,
    )


DIVERGENCES = {"quadratic": quadratic, "exp": exponential}


def bregman(d: BregmanDivergence, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return d.phi(a) - d.phi(b) - np.sum((a - b) * d.grad_phi(b), axis=-1)


# --------------------------------------------------------------------------- loss

def conditional_target(ns: NoiseSchedule, z, eps, t, head: str):
    if head == "x_prediction":
        return z
    t = np.asarray(t, dtype=float)[:, None]
    return ns.alpha_dot(t) * z + ns.sigma_dot(t) * eps


def draw_batch(data, ns: NoiseSchedule, batch: int, rng: np.random.Generator):
    """``(t, z, eps, x)`` with ``z`` from a mixture or resampled rows of a sample matrix."""
    t = rng.uniform(DELTA, 1.0 - DELTA, size=batch)
    if isinstance(data, GaussianMixture):
        z = data.sample(batch, rng)
    else:
        z = data[rng.integers(0, data.shape[0], size=batch)]
    eps = rng.standard_normal(z.shape)
    x = ns.alpha(t)[:, None] * z + ns.sigma(t)[:, None] * eps
    return t, z, eps, x


def loss_and_grad(model: Mlp, d: BregmanDivergence, x, t, target, need_grad: bool = True):
    out, acts = model.forward(time_features(x, t), keep=True)
    per = bregman(d, target, out)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        raise EvaluationError(f"non-finite loss at batch sample {int(bad[0])}")
    loss = float(per.mean())
    if not need_grad:
        return loss, None
    grads = model.backward(acts, d.grad_b(target, out) / x.shape[0])
    return loss, grads


def cgm_loss_batch(model: Mlp, d: BregmanDivergence, data, ns: NoiseSchedule, batch: int,
                   rng: np.random.Generator, head: str = "velocity"):
    """Mean conditional loss over one freshly drawn batch and its parameter gradient."""
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}; expected one of {HEADS}")
    t, z, eps, x = draw_batch(data, ns, batch, rng)
    return loss_and_grad(model, d, x, t, conditional_target(ns, z, eps, t, head))


def finite_difference_check(model: Mlp, loss_fn: Callable[[Mlp], float], grads, n_probe: int = 20,
                            h: float = 1e-5, rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``grads`` and central differences on ``n_probe`` parameters."""
    rng = np.random.default_rng(0) if rng is None else rng
    flat_g = np.concatenate([g.ravel() for g in grads])
    base = model.flat()
    worst = 0.0
    for k in rng.choice(base.size, size=min(n_probe, base.size), replace=False):
        vec = base.copy()
        vec[k] += h
        model.set_flat(vec)
        up = loss_fn(model)
        vec[k] -= 2 * h
        model.set_flat(vec)
        down = loss_fn(model)
        fd = (up - down) / (2 * h)
        scale = max(abs(fd), abs(flat_g[k]), 1e-8)
        worst = max(worst, abs(fd - flat_g[k]) / scale)
    model.set_flat(base)
    return worst


def gm_vs_cgm_gradient_check(model: Mlp, d: BregmanDivergence, atoms, ns: NoiseSchedule,
                             t_fixed: float, x_grid, weights=None, head: str = "velocity") -> float:
    """Compare gradients of the exact marginal loss with the exact expected conditional loss.

    Data is a finite set of atoms, so the posterior over atoms given ``x`` is exact and the
    conditional expectation is a finite sum.  Returns ``max|g_GM - g_CGM| / max|g_GM|``.
    """
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    m = atoms.shape[0]
    if m > 8:
        raise ValidationError("gradient check supports at most 8 atoms")
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=float)
    x = np.atleast_2d(np.asarray(x_grid, dtype=float))
    n = x.shape[0]
    a, s = float(ns.alpha(t_fixed)), float(ns.sigma(t_fixed))
    law = MarginalLaw(w, a * atoms, np.full(m, s * s), t_fixed)
    post = law.responsibilities(x)                                # (n, m)
    t = np.full(n, float(t_fixed))
    cond = []
    for j in range(m):
        z = np.broadcast_to(atoms[j], x.shape)
        eps = (x - a * z) / s
        cond.append(conditional_target(ns, z, eps, t, head))
    cond = np.stack(cond, axis=1)                                 # (n, m, d)
    marginal = np.einsum("nm,nmd->nd", post, cond)

    out, acts = model.forward(time_features(x, t), keep=True)
    g_gm = model.backward(acts, d.grad_b(marginal, out) / n)
    gout = sum(post[:, j:j + 1] * d.grad_b(cond[:, j], out) for j in range(m)) / n
    g_cgm = model.backward(acts, gout)
    flat_gm = np.concatenate([g.ravel() for g in g_gm])
    flat_cgm = np.concatenate([g.ravel() for g in g_cgm])
    scale = float(np.max(np.abs(flat_gm)))
    if scale == 0.0:
        return float(np.max(np.abs(flat_cgm)))
    return float(np.max(np.abs(flat_gm - flat_cgm)) / scale)


# --------------------------------------------------------------------------- learned field

class ModelField(FieldSource):
    """Sampler adaptor around a trained network."""

    def __init__(self, model: Mlp, ns: NoiseSchedule, head: str = "velocity"):
        super().__init__(ns)
        self.model = model
        self.head = "velocity" if head == "velocity" else "x"

    @property
    def dim(self) -> int:
        return self.model.sizes[-1]

    def predict(self, z, t):
        return self.model.field(z, t)


def relative_field_error(field_src: FieldSource, gm: GaussianMixture, ns: NoiseSchedule, seed: int,
                         times=PROBE_TIMES, n_per_time: int = 2000) -> tuple[float, dict]:
    """Relative L2 velocity error with probe points drawn from each marginal ``p_t``."""
    num = den = 0.0
    per_time = {}
    for k, t in enumerate(times):
        x = analytic.marginal_law(gm, ns, t).sample(n_per_time, rngmod.stream(seed, "probe", k + 1))
        u = analytic.marginal_velocity(gm, ns, x, t)
        err = field_src.velocity(x, t) - u
        e2, u2 = float(np.sum(err * err)), float(np.sum(u * u))
        per_time[repr(float(t))] = math.sqrt(e2 / u2) if u2 > 0 else math.sqrt(e2)
        num += e2
        den += u2
    return (math.sqrt(num / den) if den > 0 else math.sqrt(num)), per_time


def mode_fractions(samples: np.ndarray, means: np.ndarray) -> list:
    d2 = ((samples[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return (np.bincount(d2.argmin(axis=1), minlength=means.shape[0]) / samples.shape[0]).tolist()


# --------------------------------------------------------------------------- training loop

@dataclass
class TrainConfig:
    dataset: DatasetSpec
    iterations: int = 20000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    schedule: str = "flow_matching"
    head: str = "velocity"
    divergence: str = "quadratic"
    hidden: tuple = (64, 64, 64)
    eval_every: int = 200
    eval_batch: int = 4096
    n_generate: int = 0
    generate_steps: int = 200

    def __post_init__(self):
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigError(f"iterations must be a nonnegative integer, got {self.iterations!r}")
        for name in ("batch_size", "eval_every", "eval_batch", "generate_steps"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if not isinstance(self.n_generate, (int, np.integer)) or self.n_generate < 0:
            raise ConfigError("n_generate must be a nonnegative integer")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"unknown divergence {self.divergence!r}; expected one of {sorted(DIVERGENCES)}")
        if self.schedule not in BUILTIN or self.schedule == "identity":
            raise ConfigError(f"training needs a noising schedule, got {self.schedule!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dataset"] = {"kind": self.dataset.kind, "n": self.dataset.n, "seed": self.dataset.seed,
                          **self.dataset.params}
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class TrainReport:
    config: dict
    loss_curve: list = field(default_factory=list)     # [(iteration, eval loss), ...]
    relative_field_error: float | None = None
    field_error_by_time: dict = field(default_factory=dict)
    mode_fractions: list | None = None
    iterations_run: int = 0
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "config": self.config,
            "loss_curve": [[int(i), float(v)] for i, v in self.loss_curve],
            "relative_field_error": self.relative_field_error,
            "field_error_by_time": self.field_error_by_time,
            "mode_fractions": self.mode_fractions,
            "iterations_run": self.iterations_run,
        }
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


def train(cfg: TrainConfig) -> tuple[Mlp, TrainReport]:
    """Adam on the conditional loss; per-iteration RNG streams make the run seed-deterministic."""
    started = time.perf_counter()
    ns = BUILTIN[cfg.schedule]()
    gm = cfg.dataset.mixture()
    data = gm if gm is not None else generate(cfg.dataset)
    dim = data.dim if gm is not None else data.shape[1]
    d = DIVERGENCES[cfg.divergence]()
    model = Mlp.for_field(dim, cfg.hidden, rng=rngmod.stream(cfg.seed, "init"))
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2)
    report = TrainReport(cfg.to_dict())

    et, ez, eeps, ex = draw_batch(data, ns, cfg.eval_batch, rngmod.stream(cfg.seed, "probe", 0))
    etarget = conditional_target(ns, ez, eeps, et, cfg.head)

    def evaluate(it):
        loss, _ = loss_and_grad(model, d, ex, et, etarget, need_grad=False)
        report.loss_curve.append((it, loss))
        if not loss < DIVERGE_AT:
            report.iterations_run = it
            report.wall_clock = time.perf_counter() - started
            raise TrainingDivergedError(f"training diverged at iteration {it}: loss {loss:.3g}", report)

    evaluate(0)
    for it in range(1, cfg.iterations + 1):
        loss, grads = cgm_loss_batch(model, d, data, ns, cfg.batch_size,
                                     rngmod.stream(cfg.seed, "train", it), cfg.head)
        if not loss < DIVERGE_AT:
            report.iterations_run = it
            report.wall_clock = time.perf_counter() - started
            raise TrainingDivergedError(f"training diverged at iteration {it}: loss {loss:.3g}", report)
        opt.step(model.params, grads)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            evaluate(it)
    report.iterations_run = cfg.iterations

    if gm is not None:
        src = ModelField(model, ns, cfg.head)
        report.relative_field_error, report.field_error_by_time = relative_field_error(
            src, gm, ns, cfg.seed)
        if cfg.n_generate:
            scfg = SamplerConfig(steps=cfg.generate_steps, seed=cfg.seed, step_kind="flow_euler")
            samples, _ = sample(src, scfg, cfg.n_generate)
            report.mode_fractions = mode_fractions(samples, gm.means)
    report.wall_clock = time.perf_counter() - started
    return model, report


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")
