"""Strict JSON experiment configs: every section has a closed key set and defaults."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

PROBE_T = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

DEFAULTS = {
    "convert": {"n": 9, "t_min": 0.1, "t_max": 0.9, "times": None, "epsilon": 1.0},
    "sampler": {"steps": 200, "t_start": 0.999, "t_end": 0.0, "step_kind": "ddim",
                "epsilon": None, "eta": None, "n_samples": 10000, "keep_trajectories": 0},
    "train": {"iterations": 20000, "batch_size": 256, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999,
              "head": "velocity", "divergence": "quadratic", "hidden": [64, 64, 64],
              "eval_every": 200, "eval_batch": 4096, "n_generate": 0, "generate_steps": 200},
    "kfe": {"generator": "flow", "epsilon": 1.0, "scale": 2.0, "noise_scale": 0.5,
            "noise_center": 0.0, "noise_width": 1.0, "times": PROBE_T, "threshold": 1e-3},
    "superpose": {"parts": None, "times": PROBE_T, "threshold": 1e-3, "n_samples": 10000,
                  "steps": 500, "t_start": 0.99},
    "sensitivity": {"magnitudes": [0.0, 0.01, 0.03, 0.1, 0.3], "n_samples": 4000, "steps": 200,
                    "center": 0.5, "width": 1.0, "samplers": ["pf_ode", "reverse_sde"]},
    "discrete": {"n_states": 4, "targets": [2], "weights": None, "kappa": "linear", "p0": None,
                 "x0": None, "t0": 0.0, "t1": 0.99, "n_runs": 10000, "scheme": "exact_clock",
                 "h": 1e-3, "rates": None, "tv_threshold": 0.05},
}

PART_KEYS = {"kind", "weight", "epsilon", "scale", "noise_scale", "noise_center", "noise_width"}
TOP_KEYS = {"seed", "out", "schedule", "mixture", "dataset", *DEFAULTS}


def load(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    """Defaults for ``name`` overlaid with the config's section; unknown keys rejected."""
    given = cfg.get(name) or {}
    if not isinstance(given, dict):
        raise ConfigError(f"section '{name}' must be an object")
    unknown = set(given) - set(DEFAULTS[name])
    if unknown:
        raise ConfigError(f"section '{name}': unknown keys {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS[name])
    out.update(given)
    return out


def check_part(part: dict, index: int) -> dict:
    if not isinstance(part, dict):
        raise ConfigError(f"superpose part {index} must be an object")
    unknown = set(part) - PART_KEYS
    if unknown:
        raise ConfigError(f"superpose part {index}: unknown keys {sorted(unknown)}")
    if "kind" not in part or "weight" not in part:
        raise ConfigError(f"superpose part {index} needs 'kind' and 'weight'")
    return part


def mixture_section(cfg: dict):
    """``{"components": [...]}``; defaults to the standard 1-D Gaussian."""
    from .analytic import GaussianMixture

    mix = cfg.get("mixture")
    if mix is None:
        return GaussianMixture.standard(1)
    if not isinstance(mix, dict) or set(mix) != {"components"}:
        raise ConfigError("section 'mixture' must be {\"components\": [...]}")
    return GaussianMixture.from_config(mix["components"])


def schedule_section(cfg: dict):
    from . import schedule

    sched = cfg.get("schedule", {"kind": "flow_matching"})
    if not isinstance(sched, dict):
        raise ConfigError("section 'schedule' must be an object")
    return schedule.from_config(sched)


def resolved(cfg: dict, seed: int) -> dict:
    """The config echo: input plus the effective seed."""
    out = copy.deepcopy(cfg)
    out["seed"] = seed
    return out
