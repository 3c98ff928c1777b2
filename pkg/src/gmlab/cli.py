"""Command-line entry point: ``gmlab <subcommand> --config path.json [--out dir] [--seed N] [--threads K]``.

Exit codes: 0 success, 1 usage or configuration error, 2 verification threshold
violated, 3 numerical failure.  Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analytic, config, discrete, generator, kfe, plots, schedule
from .data import DatasetSpec
from .errors import ConfigError, GmlabError, TrainingDivergedError
from .nn import save_checkpoint
from .sampler import OracleField, PerturbedField, SamplerConfig, moment_check, sample, sample_generator
from .stats import energy_distance, spearman
from .train import TrainConfig, train

log = logging.getLogger("gmlab")

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATED, EXIT_NUMERIC = 0, 1, 2, 3


# --------------------------------------------------------------------------- output helpers

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n",
                          encoding="utf-8")


def write_samples(path: Path, pts: np.ndarray) -> None:
    write_csv(path, [f"x{k}" for k in range(pts.shape[1])], pts.tolist())


class Run:
    """Per-invocation context: output directory, seed, threads, figure switch."""

    def __init__(self, name: str, cfg: dict, out: Path, seed: int, threads: int, figures: bool):
        self.name, self.cfg, self.out = name, cfg, out
        self.seed, self.threads, self.figures = seed, threads, figures

    def path(self, fname: str) -> Path:
        return self.out / fname

    def figure(self, fn, *args, **kwargs) -> None:
        if self.figures:
            fn(*args, self.out, **kwargs)


# --------------------------------------------------------------------------- generators

def build_generator(kind: str, params: dict, path, ns):
    if kind == "flow":
        return generator.flow_generator(path)
    if kind == "corrupted":
        return generator.flow_generator(path, float(params.get("scale", 2.0)),
                                        name=f"flow x{float(params.get('scale', 2.0)):g}")
    if kind == "langevin":
        return generator.langevin_generator(path, float(params.get("epsilon", 1.0)))
    if kind == "state_dependent":
        sig, grad = generator.bump_noise(float(params.get("noise_scale", 0.5)),
                                         params.get("noise_center", 0.0),
                                         float(params.get("noise_width", 1.0)))
        return generator.state_dependent_generator(path, sig, grad)
    if kind == "diffusion":
        return generator.diffusion_form_generator(schedule.diffusion_from_interpolation(ns))
    if kind == "zero":
        return generator.zero_generator()
    raise ConfigError(f"unknown generator kind {kind!r}; expected one of "
                      "['corrupted', 'diffusion', 'flow', 'langevin', 'state_dependent', 'zero']")


# --------------------------------------------------------------------------- subcommands

def cmd_convert(run: Run) -> int:
    sec = config.section(run.cfg, "convert")
    ns = config.schedule_section(run.cfg)
    times = (np.asarray(sec["times"], dtype=float) if sec["times"] is not None
             else np.linspace(float(sec["t_min"]), float(sec["t_max"]), int(sec["n"])))
    if times.size == 0:
        raise ConfigError("convert needs at least one time")
    eps = float(sec["epsilon"])
    ds = schedule.diffusion_from_interpolation(ns, schedule.StochasticityLevel.constant(eps))
    rows = []
    for t in times:
        t = float(t)
        rows.append((t, float(ns.alpha(t)), float(ns.sigma(t)), float(ds.f(t)), float(ds.g(t)), eps))
    write_csv(run.path("convert.csv"), ["t", "alpha", "sigma", "f", "g", "eps"], rows)
    rt_grid = times[(times >= 0) & (times <= min(0.99, ns.t_max))]
    summary = {
        "schedule": ns.name,
        "rows": len(rows),
        "round_trip_error": schedule.round_trip_check(ns, rt_grid) if rt_grid.size else None,
    }
    write_json(run.path("convert.json"), summary)
    run.figure(plots.schedule_table, rows)
    return EXIT_OK


def cmd_sample(run: Run) -> int:
    sec = config.section(run.cfg, "sampler")
    ns = config.schedule_section(run.cfg)
    gm = config.mixture_section(run.cfg)
    scfg = SamplerConfig(steps=sec["steps"], t_start=float(sec["t_start"]), t_end=float(sec["t_end"]),
                         seed=run.seed, step_kind=sec["step_kind"], epsilon=sec["epsilon"],
                         eta=sec["eta"])
    n = int(sec["n_samples"])
    keep = int(sec["keep_trajectories"])
    terminal, traj = sample(OracleField(gm, ns), scfg, n, threads=run.threads, keep=keep)
    write_samples(run.path("samples.csv"), terminal)
    if traj is not None:
        rows = []
        for j in range(traj.states.shape[1]):
            for k, t in enumerate(traj.times):
                rows.append([j, k, float(t), *traj.states[k, j].tolist()])
        write_csv(run.path("trajectories.csv"),
                  ["trajectory", "step", "t", *[f"x{i}" for i in range(gm.dim)]], rows)
    check = moment_check(terminal, gm.mean(), np.diag(gm.covariance()))
    write_json(run.path("sample_report.json"), {
        "step_kind": scfg.step_kind, "steps": scfg.steps, "n_samples": n,
        "epsilon": scfg.eps_value, "eta": scfg.eta, "moments": check,
    })
    if gm.dim == 1:
        xs = np.linspace(terminal.min() - 0.5, terminal.max() + 0.5, 400)
        law = analytic.marginal_law(gm, ns, 0.0)
        run.figure(plots.samples, terminal, reference=(xs, law.density(xs[:, None])))
    else:
        run.figure(plots.samples, terminal)
    return EXIT_OK


def cmd_train(run: Run) -> int:
    if "dataset" not in run.cfg:
        raise ConfigError("train needs a 'dataset' section")
    sec = config.section(run.cfg, "train")
    sched = run.cfg.get("schedule", {"kind": "flow_matching"})
    if set(sched) - {"kind"}:
        raise ConfigError("train supports built-in schedules without parameters")
    ds_cfg = run.cfg["dataset"]
    if not isinstance(ds_cfg, dict):
        raise ConfigError("section 'dataset' must be an object")
    tcfg = TrainConfig(dataset=DatasetSpec.from_config(ds_cfg), seed=run.seed,
                       schedule=sched.get("kind", "flow_matching"), **sec)
    try:
        model, report = train(tcfg)
    except TrainingDivergedError as exc:
        if exc.report is not None:
            write_json(run.path("train_report.json"), exc.report.to_dict())
        raise
    save_checkpoint(model, run.path("model.gmlb"))
    write_json(run.path("train_report.json"), report.to_dict())
    write_csv(run.path("loss.csv"), ["iteration", "loss"], report.loss_curve)
    run.extra = {"wall_clock_train": report.wall_clock}
    run.figure(plots.loss_curve, report.loss_curve)
    return EXIT_OK


def _path_and_times(run: Run, sec: dict):
    ns = config.schedule_section(run.cfg)
    gm = config.mixture_section(run.cfg)
    times = [float(t) for t in sec["times"]]
    if not times:
        raise ConfigError("need at least one KFE time")
    return ns, gm, analytic.GaussianPath(gm, ns), times


def cmd_verify_kfe(run: Run) -> int:
    sec = config.section(run.cfg, "kfe")
    ns, gm, path, times = _path_and_times(run, sec)
    gen = build_generator(sec["generator"], sec, path, ns)
    report = kfe.verify_kfe(path, gen, generator.battery(gm.dim), times, float(sec["threshold"]),
                            meta={"schedule": ns.name})
    Path(run.path("kfe_report.json")).write_text(report.to_json(), encoding="utf-8")
    Path(run.path("kfe_residuals.csv")).write_text(report.to_csv(), encoding="utf-8")
    run.figure(plots.kfe_residuals, report.residuals, report.threshold)
    return EXIT_OK if report.verified else EXIT_VIOLATED


def cmd_superpose(run: Run) -> int:
    sec = config.section(run.cfg, "superpose")
    ns, gm, path, times = _path_and_times(run, sec)
    parts_cfg = sec["parts"] or [{"kind": "flow", "weight": 0.5}, {"kind": "langevin", "weight": 0.5}]
    parts = []
    for i, p in enumerate(parts_cfg):
        p = config.check_part(p, i)
        parts.append((float(p["weight"]), build_generator(p["kind"], p, path, ns)))
    mix = generator.superpose(parts)
    battery = generator.battery(gm.dim)
    report = kfe.verify_kfe(path, mix, battery, times, float(sec["threshold"]),
                            meta={"schedule": ns.name})
    report.meta["weights"] = [w for w, _ in parts]
    report.meta["parts"] = [g.name for _, g in parts]
    if len(parts) == 2:
        (a, ga), (b, gb) = parts
        report.meta["linearity_error"] = kfe.superposition_linearity(ga, gb, a, b, path, battery, times)
    Path(run.path("kfe_report.json")).write_text(report.to_json(), encoding="utf-8")
    Path(run.path("kfe_residuals.csv")).write_text(report.to_csv(), encoding="utf-8")

    t_start = float(sec["t_start"])
    start_law = analytic.marginal_law(gm, ns, t_start)
    reverse = generator.time_reversed(mix.combined(), path.score)
    pts = sample_generator(reverse, lambda m, rng: start_law.sample(m, rng), int(sec["n_samples"]),
                           int(sec["steps"]), 1.0 - t_start, 1.0, run.seed, run.threads)
    write_samples(run.path("samples.csv"), pts)
    write_json(run.path("superpose_report.json"), {
        "kfe_verified": report.verified,
        "max_residual": report.max_residual,
        "moments": moment_check(pts, gm.mean(), np.diag(gm.covariance())),
    })
    run.figure(plots.kfe_residuals, report.residuals, report.threshold)
    run.figure(plots.samples, pts)
    return EXIT_OK if report.verified else EXIT_VIOLATED


def cmd_sensitivity(run: Run) -> int:
    """Bump-perturbed denoiser, deterministic vs stochastic sampler; reported, not asserted.

    Perturbed and reference runs share random numbers, so the m = 0 deviation is exactly
    zero; the noise floor is the deviation between two unperturbed runs with different seeds.
    """
    sec = config.section(run.cfg, "sensitivity")
    ns = config.schedule_section(run.cfg)
    gm = config.mixture_section(run.cfg)
    mags = [float(m) for m in sec["magnitudes"]]
    if not mags or any(m < 0 for m in mags):
        raise ConfigError("sensitivity magnitudes must be a nonempty list of nonnegative numbers")
    n, steps = int(sec["n_samples"]), int(sec["steps"])
    base = OracleField(gm, ns)
    settings = {"pf_ode": {"step_kind": "pf_ode", "epsilon": 0.0},
                "reverse_sde": {"step_kind": "reverse_sde", "eta": 1.0}}
    deviations, floors, rho, rows = {}, {}, {}, []
    for name in sec["samplers"]:
        if name not in settings:
            raise ConfigError(f"unknown sensitivity sampler {name!r}; expected one of {sorted(settings)}")
        scfg = SamplerConfig(steps=steps, seed=run.seed, **settings[name])
        ref, _ = sample(base, scfg, n, threads=run.threads)
        alt = SamplerConfig(steps=steps, seed=run.seed + 1, **settings[name])
        other, _ = sample(base, alt, n, threads=run.threads)
        floors[name] = energy_distance(ref, other)
        devs = []
        for m in mags:
            field_m = PerturbedField(base, m, center=sec["center"], width=float(sec["width"]))
            pts, _ = sample(field_m, scfg, n, threads=run.threads)
            devs.append(energy_distance(pts, ref))
            rows.append((name, m, devs[-1]))
        deviations[name] = devs
        rho[name] = spearman(mags, devs)
    write_csv(run.path("sensitivity.csv"), ["sampler", "magnitude", "energy_distance"], rows)
    write_json(run.path("sensitivity_report.json"), {
        "magnitudes": mags,
        "deviations": deviations,
        "noise_floor": floors,
        "spearman_rho": rho,
        "n_samples": n,
        "steps": steps,
    })
    run.figure(plots.sensitivity, mags, deviations, floors)
    return EXIT_OK


def cmd_discrete(run: Run) -> int:
    sec = config.section(run.cfg, "discrete")
    n = int(sec["n_states"])
    if n < 1:
        raise ConfigError("n_states must be >= 1")
    t0, t1 = float(sec["t0"]), float(sec["t1"])
    p0 = (discrete.DiscreteDistribution.uniform(n) if sec["p0"] is None
          else discrete.DiscreteDistribution(np.asarray(sec["p0"], dtype=float)))
    analytic_probs = None
    if sec["rates"] is not None:
        q = discrete.RateMatrix(np.asarray(sec["rates"], dtype=float))
        if q.n != n:
            raise ConfigError(f"rates must be {n}x{n}")
        rates = discrete.TimeRates.fixed(q)
    else:
        t1 = discrete.clamp_horizon(t1)
        targets = [int(z) for z in sec["targets"]]
        weights = (np.full(len(targets), 1.0 / len(targets)) if sec["weights"] is None
                   else np.asarray(sec["weights"], dtype=float))
        paths = [discrete.MixturePath.build(n, z, sec["kappa"], p0.probs) for z in targets]
        rates = (discrete.TimeRates.mixture(paths[0]) if len(paths) == 1
                 else discrete.marginal_rates(paths, weights))
        if t0 == 0.0 and sec["x0"] is None:
            analytic_probs = discrete.mixed_path_probs(paths, weights, t1)
    start = p0 if sec["x0"] is None else discrete.DiscreteDistribution(np.eye(n)[int(sec["x0"])])
    x0 = start if sec["x0"] is None else int(sec["x0"])
    sol = discrete.master_equation_solve(rates, start, t0, t1)
    states = discrete.ctmc_simulate(rates, x0, t0, t1, run.seed, sec["scheme"], int(sec["n_runs"]),
                                    float(sec["h"]), run.threads)
    emp = discrete.histogram(states, n)
    tv = discrete.total_variation(emp, sol.dist.probs)
    cols = [range(n), emp, sol.dist.probs]
    header = ["state", "empirical", "master"]
    if analytic_probs is not None:
        cols.append(analytic_probs)
        header.append("analytic")
    write_csv(run.path("histogram.csv"), header, zip(*cols))
    write_json(run.path("discrete_report.json"), {
        "t1": t1, "scheme": sec["scheme"], "n_runs": int(sec["n_runs"]),
        "tv_empirical_vs_master": tv,
        "tv_master_vs_analytic": (None if analytic_probs is None
                                  else discrete.total_variation(sol.dist.probs, analytic_probs)),
        "renormalization_drift": sol.renormalization_drift,
        "tv_threshold": float(sec["tv_threshold"]),
        "verified": tv < float(sec["tv_threshold"]),
    })
    run.figure(plots.discrete_histogram, emp, sol.dist.probs)
    return EXIT_OK if tv < float(sec["tv_threshold"]) else EXIT_VIOLATED


COMMANDS = {
    "convert": cmd_convert,
    "sample": cmd_sample,
    "train": cmd_train,
    "verify-kfe": cmd_verify_kfe,
    "sensitivity": cmd_sensitivity,
    "superpose": cmd_superpose,
    "discrete-demo": cmd_discrete,
}
ALIASES = {"discrete": "discrete-demo"}


# --------------------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        sys.exit(EXIT_CONFIG)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gmlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, aliases=[k for k, v in ALIASES.items() if v == name])
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (default $GMLAB_OUT/<command>)")
        sp.add_argument("--seed", type=int, help="overrides the config's seed")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = ALIASES.get(args.command, args.command)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = config.load(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out = Path(args.out or cfg.get("out")
                   or Path(os.environ.get("GMLAB_OUT", "gmlab_out")) / command)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(command, cfg, out, seed, args.threads, not args.no_figures)
        write_json(out / "config.json", config.resolved(cfg, seed))
        code = COMMANDS[command](run)
    except ConfigError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_CONFIG
    except GmlabError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_NUMERIC
    except ArithmeticError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_NUMERIC
    except (TypeError, ValueError) as exc:
        # malformed values inside an otherwise well-formed config (wrong types, ragged arrays)
        _emit_error("ConfigError", str(exc))
        return EXIT_CONFIG
    write_json(out / "run.json", {
        "command": command,
        "version": __version__,
        "seed": seed,
        "threads": args.threads,
        "exit_code": code,
        "wall_clock": time.perf_counter() - started,
        **getattr(run, "extra", {}),
    })
    return code


if __name__ == "__main__":
    sys.exit(main())
