"""Matplotlib figures written next to a run's CSV/JSON output (``<out>/figures``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, out_dir, name: str) -> Path:
    path = Path(out_dir) / "figures"
    path.mkdir(parents=True, exist_ok=True)
    target = path / f"{name}.png"
    fig.tight_layout()
    fig.savefig(target, metadata={"Software": None})
    plt.close(fig)
    return target


def schedule_table(rows, out_dir) -> Path:
    """``rows`` are ``(t, alpha, sigma, f, g, eps)``."""
    arr = np.asarray(rows, dtype=float)
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8, 3.2))
        left.plot(arr[:, 0], arr[:, 1], label=r"$\alpha_t$")
        left.plot(arr[:, 0], arr[:, 2], label=r"$\sigma_t$")
        left.set_xlabel("t")
        left.legend()
        right.plot(arr[:, 0], arr[:, 3], label=r"$f_t$")
        right.plot(arr[:, 0], arr[:, 4], label=r"$g_t$")
        right.plot(arr[:, 0], arr[:, 5], "--", label=r"$\varepsilon_t$")
        right.set_xlabel("t")
        right.legend()
        return _save(fig, out_dir, "schedule")


def samples(points: np.ndarray, out_dir, name: str = "samples", reference=None) -> Path:
    """Histogram for 1-D samples, scatter for 2-D (first two coordinates otherwise)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if points.shape[1] == 1:
            ax.hist(points[:, 0], bins=80, density=True, alpha=0.6, label="samples")
            if reference is not None:
                xs, ps = reference
                ax.plot(xs, ps, "k", lw=1, label="target density")
            ax.set_xlabel("x")
            ax.legend()
        else:
            ax.scatter(points[:, 0], points[:, 1], s=1, alpha=0.3)
            ax.set_aspect("equal")
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        return _save(fig, out_dir, name)


def loss_curve(curve, out_dir) -> Path:
    arr = np.asarray(curve, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(arr[:, 0], arr[:, 1])
        ax.set_xlabel("iteration")
        ax.set_ylabel("eval loss")
        return _save(fig, out_dir, "loss")


def kfe_residuals(residuals, threshold: float, out_dir, name: str = "kfe_residuals") -> Path:
    """``residuals`` are ``(f_name, t, value)`` triples; one line per test function."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(dict.fromkeys(r[0] for r in residuals))
        for fname in names:
            pts = [(t, max(v, 1e-18)) for n, t, v in residuals if n == fname]
            ts, vs = zip(*pts)
            ax.semilogy(ts, vs, marker="o", ms=3, label=fname)
        ax.axhline(threshold, color="k", ls="--", lw=1, label="threshold")
        ax.set_xlabel("t")
        ax.set_ylabel("|KFE residual|")
        ax.legend(ncol=2)
        return _save(fig, out_dir, name)


def sensitivity(magnitudes, deviations: dict, floors: dict, out_dir) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k, (sampler, devs) in enumerate(deviations.items()):
            line, = ax.plot(magnitudes, devs, marker="o", label=sampler)
            ax.axhline(floors[sampler], color=line.get_color(), ls=":", lw=1)
        ax.set_xlabel("perturbation magnitude m")
        ax.set_ylabel("energy distance to unperturbed")
        ax.legend()
        return _save(fig, out_dir, "sensitivity")


def discrete_histogram(empirical, master, out_dir) -> Path:
    n = len(empirical)
    idx = np.arange(n)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(idx - 0.2, empirical, width=0.4, label="CTMC runs")
        ax.bar(idx + 0.2, master, width=0.4, label="master equation")
        ax.set_xticks(idx)
        ax.set_xlabel("state")
        ax.set_ylabel("probability")
        ax.legend()
        return _save(fig, out_dir, "discrete")
