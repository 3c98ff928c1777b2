"""Toy datasets and strict CSV ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .analytic import GaussianMixture
from .errors import ConfigError, ValidationError

KINDS = ("gaussian_mixture", "checkerboard", "two_moons", "csv_file")

_PARAMS = {
    "gaussian_mixture": {"components"},
    "checkerboard": set(),
    "two_moons": {"noise"},
    "csv_file": {"path"},
}


@dataclass
class DatasetSpec:
    kind: str
    n: int = 1000
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"dataset sample count must be a positive integer, got {self.n!r}")
        extra = set(self.params) - _PARAMS[self.kind]
        if extra:
            raise ConfigError(f"dataset {self.kind}: unknown parameters {sorted(extra)}")
        if self.kind == "gaussian_mixture" and "components" not in self.params:
            raise ConfigError("gaussian_mixture dataset needs 'components'")
        if self.kind == "csv_file" and "path" not in self.params:
            raise ConfigError("csv_file dataset needs 'path'")

    @classmethod
    def from_config(cls, cfg: dict) -> "DatasetSpec":
        cfg = dict(cfg)
        try:
            kind = cfg.pop("kind")
        except KeyError:
            raise ConfigError("dataset section needs 'kind'") from None
        n = cfg.pop("n", 1000)
        seed = cfg.pop("seed", 0)
        return cls(kind, n, seed, cfg)

    def mixture(self) -> GaussianMixture | None:
        if self.kind != "gaussian_mixture":
            return None
        return GaussianMixture.from_config(self.params["components"])


def checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on the 8 dark cells of a 4x4 board over ``[-2, 2]^2``."""
    cells = np.array([(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0])
    pick = cells[rng.integers(0, len(cells), size=n)]
    return -2.0 + pick + rng.random((n, 2))


def two_moons(n: int, rng: np.random.Generator, noise: float = 0.0) -> np.ndarray:
    """Upper unit arc centred at the origin and lower unit arc centred at ``(1, 0.5)``."""
    upper = rng.random(n) < 0.5
    theta = math.pi * rng.random(n)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x, y], axis=1)
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    return pts


def load_csv(path) -> np.ndarray:
    """Comma-separated floats, one point per line; blank lines skipped, no header."""
    rows, width = [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValidationError(f"{path}:{lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def generate(spec: DatasetSpec) -> np.ndarray:
    """Sample matrix ``(spec.n, d)``; deterministic in ``spec.seed``."""
    if spec.kind == "csv_file":
        return load_csv(spec.params["path"])
    rng = rngmod.stream(spec.seed, "data")
    if spec.kind == "gaussian_mixture":
        return spec.mixture().sample(spec.n, rng)
    if spec.kind == "checkerboard":
        return checkerboard(spec.n, rng)
    return two_moons(spec.n, rng, float(spec.params.get("noise", 0.0)))
