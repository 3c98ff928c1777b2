"""Acceptance suite: one printed PASS/FAIL line per criterion at the stated tolerances."""

import json
import math

import numpy as np
import pytest

from gmlab import discrete, generator, kfe, schedule
from gmlab.analytic import GaussianMixture, GaussianPath
from gmlab.cli import main
from gmlab.data import DatasetSpec
from gmlab.generator import ContinuousGenerator
from gmlab.nn import Mlp
from gmlab.rng import stream
from gmlab.sampler import (STEP_KINDS, OracleField, SamplerConfig, ddim_step, flow_euler_step, moment_check,
                           pf_ode_step, reverse_sde_step, sample)
from gmlab.train import (DIVERGENCES, TrainConfig, finite_difference_check, gm_vs_cgm_gradient_check,
                         loss_and_grad, moving_average, train)

from conftest import two_bumps_1d, two_bumps_2d

TIMES = [round(0.1 * k, 1) for k in range(1, 10)]


@pytest.fixture
def emit(capsys):
    def _emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _emit


def test_criterion_01_schedule_round_trip(emit):
    grid = np.linspace(0.0, 0.99, 100)
    errs = {name: schedule.round_trip_check(schedule.BUILTIN[name](), grid)
            for name in ("flow_matching", "variance_preserving", "variance_exploding")}
    worst = max(errs.values())
    emit(1, worst < 1e-6, f"max round-trip error {worst:.2e} (< 1e-6) " +
         ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))


def test_criterion_02_ddim_is_flow_euler(emit):
    ns = schedule.flow_matching()
    rng = stream(0, "probe")
    worst = 0.0
    for _ in range(1000):
        t = rng.uniform(0.01, 0.999)
        r = rng.uniform(0.0, t)
        z, x_hat = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
        eps = (z - ns.alpha(t) * x_hat) / ns.sigma(t)
        v_hat = ns.alpha_dot(t) * x_hat + ns.sigma_dot(t) * eps
        worst = max(worst, float(np.max(np.abs(ddim_step(z, x_hat, t, r, ns) - flow_euler_step(z, v_hat, t, r)))))
    emit(2, worst < 1e-12, f"max |ddim - flow_euler| {worst:.2e} over 1000 draws (< 1e-12)")


def test_criterion_03_zero_churn_collapse(emit):
    rng = stream(1, "probe")
    bitwise = True
    worst = 0.0
    for name in ("flow_matching", "variance_preserving", "variance_exploding"):
        ds = schedule.diffusion_from_interpolation(schedule.BUILTIN[name](), schedule.StochasticityLevel.constant(0.0))
        for _ in range(200):
            t = rng.uniform(0.05, 0.95)
            r = t - rng.uniform(1e-4, 0.04)
            z, s = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
            a, b = reverse_sde_step(z, ds, s, t, r), pf_ode_step(z, ds, s, t, r)
            bitwise &= a.tobytes() == b.tobytes()
            worst = max(worst, float(np.max(np.abs(a - b))))
    emit(3, bitwise or worst < 1e-15, f"bitwise equal: {bitwise}, max deviation {worst:.1e}")


def test_criterion_04_oracle_sampling(emit):
    # 3-sigma Monte Carlo bands at n = 1e4 for N(0, 1): mean 3/sqrt(n) = 0.030,
    # variance 3 sqrt(2/n) = 0.042; the +-0.05 tolerance leaves room for step bias.
    src = OracleField(GaussianMixture.standard(1), schedule.flow_matching())
    lines, ok = [], True
    for kind in STEP_KINDS:
        pts, _ = sample(src, SamplerConfig(steps=200, step_kind=kind, seed=0), 10000)
        rep = moment_check(pts, [0.0], [1.0], 0.05, 0.05)
        ok &= rep["passed"]
        lines.append(f"{kind}: mean {rep['sample_mean'][0]:+.3f} var {rep['sample_var'][0]:.3f}")
    emit(4, ok, "; ".join(lines))


def test_criterion_05_kfe_verification(emit):
    worst_match, weakest_detect = 0.0, math.inf
    for name in ("flow_matching", "variance_preserving", "variance_exploding"):
        ns = schedule.BUILTIN[name]()
        for gm in (two_bumps_1d(), two_bumps_2d()):
            path = GaussianPath(gm, ns)
            fns = generator.battery(gm.dim)
            for gen in (generator.flow_generator(path), generator.langevin_generator(path, 1.0),
                        generator.diffusion_form_generator(schedule.diffusion_from_interpolation(ns))):
                worst_match = max(worst_match, kfe.verify_kfe(path, gen, fns, TIMES).max_residual)
            bad = kfe.verify_kfe(path, generator.flow_generator(path, 2.0), fns, TIMES).max_residual
            weakest_detect = min(weakest_detect, bad)
    emit(5, worst_match < 1e-3 and weakest_detect > 1e-2,
         f"matched max residual {worst_match:.2e} (< 1e-3); corrupted min-over-cases {weakest_detect:.2e} (> 1e-2)")


def test_criterion_06_superposition(emit):
    worst, lin = 0.0, 0.0
    for gm in (two_bumps_1d(), two_bumps_2d()):
        path = GaussianPath(gm, schedule.variance_preserving(2.0))
        a, b = generator.flow_generator(path), generator.langevin_generator(path, 1.0)
        rep = kfe.superposition_marginal_check(a, b, 0.5, 0.5, path, generator.battery(gm.dim), TIMES)
        worst = max(worst, rep.max_residual)
        lin = max(lin, rep.meta["linearity_error"])
    emit(6, worst < 1e-3 and lin < 1e-10, f"mix residual {worst:.2e} (< 1e-3); linearity error {lin:.1e} (< 1e-10)")


def test_criterion_07_discrete(emit):
    path = discrete.MixturePath.build(4, 2, "linear")
    kfe_err = 0.0
    for t in np.linspace(0.0, 0.99, 100):
        q = discrete.conditional_rates(path, float(t)).rates
        kfe_err = max(kfe_err, float(np.max(np.abs(q.T @ path.probs(t) - path.probs_dot(t)))))
    rates = discrete.TimeRates.mixture(path)
    master = discrete.master_equation_solve(rates, path.p0, 0.0, 0.99)
    states = discrete.ctmc_simulate(rates, path.p0, 0.0, 0.99, seed=0, scheme="exact_clock", n_runs=10000)
    tv = discrete.total_variation(discrete.histogram(states, 4), master.dist.probs)
    emit(7, kfe_err < 1e-8 and tv < 0.05, f"KFE componentwise error {kfe_err:.1e} (< 1e-8); CTMC vs master TV {tv:.4f} (< 0.05)")


def test_criterion_08_bregman_gradients(emit):
    ns = schedule.flow_matching()
    rng = stream(2, "probe")
    dev = 0.0
    for name in sorted(DIVERGENCES):
        for dim, m in ((1, 2), (2, 8)):
            model = Mlp.for_field(dim, (64, 64, 64), rng=stream(m, "init"))
            atoms = rng.standard_normal((m, dim))
            grid = rng.standard_normal((40, dim))
            for t in (0.2, 0.7):
                dev = max(dev, gm_vs_cgm_gradient_check(model, DIVERGENCES[name](), atoms, ns, t, grid))
    fd = 0.0
    for name in sorted(DIVERGENCES):
        d = DIVERGENCES[name]()
        model = Mlp.for_field(2, (64, 64, 64), rng=stream(0, "init"))
        x, t, y = rng.standard_normal((32, 2)), rng.uniform(0.1, 0.9, 32), 0.5 * rng.standard_normal((32, 2))
        _, grads = loss_and_grad(model, d, x, t, y)
        fd = max(fd, finite_difference_check(model, lambda mdl: loss_and_grad(mdl, d, x, t, y, False)[0], grads))
    emit(8, dev < 1e-6 and fd < 1e-4, f"GM vs CGM relative deviation {dev:.1e} (< 1e-6); finite-difference error {fd:.1e} (< 1e-4)")


def test_criterion_09_cgm_training(emit):
    comps = [{"weight": 0.5, "mean": [-2.0, 0.0], "variance": 0.1},
             {"weight": 0.5, "mean": [2.0, 0.0], "variance": 0.1}]
    cfg = TrainConfig(DatasetSpec("gaussian_mixture", params={"components": comps}), iterations=20000,
                      n_generate=10000, seed=0)
    model, report = train(cfg)
    again, _ = train(cfg)
    identical = model.flat().tobytes() == again.flat().tobytes()
    fr = report.mode_fractions
    err = report.relative_field_error
    # Moving-average trend: the eval loss plateaus at its irreducible level, where batch
    # noise produces tiny upticks, so increases up to 0.5% of the running value are allowed.
    ma = moving_average([v for _, v in report.loss_curve], 10)
    rises = np.diff(ma)
    strict = int(np.sum(rises > 0))
    worst_rel = float(np.max(rises / ma[:-1])) if rises.size else 0.0
    ok = err < 0.15 and all(0.45 <= f <= 0.55 for f in fr) and identical and worst_rel <= 5e-3
    emit(9, ok, f"field error {err:.4f} (< 0.15); mode fractions {fr[0]:.4f}/{fr[1]:.4f}; "
         f"rerun bit-identical {identical}; loss MA upticks {strict}, worst {worst_rel:.1e} relative (<= 5e-3)")


def test_criterion_10_fokker_planck(emit):
    x = np.linspace(-8, 8, 801)
    g0 = kfe.DensityGrid(-8.0, 8.0, 801, np.exp(-x ** 2 / 0.1) / math.sqrt(0.1 * math.pi))
    gen = ContinuousGenerator(diffusion=lambda z, t: np.ones(z.shape[0]))
    out = kfe.fokker_planck_evolve(g0, gen, 0.0, 0.1, kfe.stable_steps(g0, gen, 0.0, 0.1))
    rate = (out.moments()[1] - g0.moments()[1]) / 0.1
    mass = abs(out.meta["mass_drift_per_unit_time"])

    adv = ContinuousGenerator(velocity=lambda z, t: np.ones_like(z), diffusion=lambda z, t: np.full(z.shape[0], 0.5))
    errs = []
    for n in (201, 401, 801):
        xs = np.linspace(-4, 4, n)
        g = kfe.DensityGrid(-4.0, 4.0, n, np.exp(-xs ** 2 / 0.2) / math.sqrt(0.2 * math.pi))
        res = kfe.fokker_planck_evolve(g, adv, 0.0, 0.5, kfe.stable_steps(g, adv, 0.0, 0.5))
        v = 0.1 + 0.25 * 0.5
        exact = np.exp(-(res.x - 0.5) ** 2 / (2 * v)) / math.sqrt(2 * math.pi * v)
        errs.append(float(np.sum(np.abs(res.values - exact)) * res.dx))
    order = min(math.log2(errs[i] / errs[i + 1]) for i in range(2))
    ok = abs(rate - 1.0) < 0.02 and mass < 1e-6 and order >= 0.8
    emit(10, ok, f"variance rate {rate:.4f} (sigma^2 = 1, within 2%); mass drift {mass:.1e}/unit time (< 1e-6); "
         f"observed order {order:.2f} (>= 0.8)")


def _cli(tmp_path, name, cfg, command, threads):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(cfg_path), "--out", str(out), "--no-figures", "--threads", str(threads)])
    return code, out


def test_criterion_11_sensitivity(emit, tmp_path):
    code, out = _cli(tmp_path, "sens", {"seed": 0}, "sensitivity", 4)
    rep = json.loads((out / "sensitivity_report.json").read_text())
    lines, ok = [], code == 0 and rep["magnitudes"] == [0.0, 0.01, 0.03, 0.1, 0.3]
    for name, devs in rep["deviations"].items():
        floor, rho = rep["noise_floor"][name], rep["spearman_rho"][name]
        ok &= devs[0] < floor and rho > 0.9 and all(math.isfinite(d) for d in devs)
        lines.append(f"{name}: m=0 dev {devs[0]:.1e} < floor {floor:.1e}, rho {rho:.2f}, m=0.3 dev {devs[-1]:.2e}")
    emit(11, ok, "; ".join(lines))


REPRO = {
    "convert": {"schedule": {"kind": "variance_preserving", "beta": 2.0}},
    "sample": {"mixture": {"components": [{"weight": 0.4, "mean": [-1.5], "variance": 0.3},
                                          {"weight": 0.6, "mean": [1.0], "variance": 0.5}]},
               "sampler": {"steps": 50, "n_samples": 1500, "step_kind": "reverse_sde", "keep_trajectories": 4}},
    "train": {"dataset": {"kind": "two_moons", "n": 500, "noise": 0.05},
              "train": {"iterations": 40, "hidden": [16, 16], "eval_every": 10, "eval_batch": 256}},
    "verify-kfe": {"kfe": {"generator": "state_dependent"}},
    "superpose": {"superpose": {"n_samples": 1000, "steps": 100}},
    "sensitivity": {"sensitivity": {"magnitudes": [0.0, 0.1], "n_samples": 600, "steps": 200}},
    "discrete-demo": {"discrete": {"n_states": 5, "targets": [1, 3], "weights": [0.3, 0.7], "kappa": "cosine",
                                   "n_runs": 3000}},
}


def _primary(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file() and p.name != "run.json"}


def test_criterion_12_reproducibility(emit, tmp_path):
    bad = []
    for command, cfg in REPRO.items():
        runs = {}
        for threads in (1, 4):
            for k in range(2):
                code, out = _cli(tmp_path, f"{command}-{threads}-{k}", {**cfg, "seed": 3}, command, threads)
                if code != 0:
                    bad.append(f"{command} exit {code}")
                runs[(threads, k)] = _primary(out)
        ref = runs[(1, 0)]
        if not all(r == ref for r in runs.values()):
            bad.append(command)
    emit(12, not bad, f"{len(REPRO)} subcommands x threads 1/4 x 2 reruns byte-identical"
         + (f"; differing: {bad}" if bad else ""))
