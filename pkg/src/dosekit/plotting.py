"""Deterministic SVG figures.

Artists carry ``gid`` attributes (``estimate-<i>``, ``fit-curve``,
``ci-band``, ``shape-<label>``, ``coverage-<method>``, ``rmse``) so the
output can be checked structurally.  A fixed hash salt and no timestamp
make repeated renders byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import rcParams
from matplotlib.figure import Figure
from scipy import special

from dosekit.errors import ValidationError
from dosekit.fitting import FittedModel, PredictionBand, predict_with_ci
from dosekit.models import CandidateModel, DoseDesign, eval_standardized, label_models, max_standardized

_METADATA = {"Date": None, "Creator": None}


def _save(fig: Figure, path: str | Path) -> None:
    p = Path(path)
    if not p.parent.exists():
        raise ValidationError(f"cannot write plot: directory {p.parent} does not exist")
    with matplotlib.rc_context({"svg.hashsalt": "dosekit", "svg.fonttype": "none"}):
        try:
            fig.savefig(p, format="svg", metadata=_METADATA)
        except OSError as exc:
            raise ValidationError(f"cannot write plot {p}: {exc}") from None


def plot_fit(
    fit: FittedModel,
    path: str | Path,
    level: float = 0.9,
    band: PredictionBand | None = None,
    points: int = 201,
) -> None:
    """Fitted curve, pointwise band and first-stage estimates with intervals."""
    est = fit.est
    x = est.doses
    grid = np.linspace(0.0, est.design.max_dose, points)
    if band is None and (fit.theta_cov is not None):
        band = predict_with_ci(fit, grid, level)
    z = special.ndtri(0.5 + level / 2.0)
    se = np.sqrt(np.diag(est.S))

    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    if band is not None:
        ax.fill_between(band.doses, band.lower, band.upper, color="0.85", gid="ci-band",
                        label=f"{int(round(level * 100))}% pointwise CI")
    (line,) = ax.plot(grid, fit.predict(grid), color="C0", gid="fit-curve", label=f"{fit.label} fit")
    for i, (xi, mi, si) in enumerate(zip(x, est.mu, se)):
        ax.errorbar([xi], [mi], yerr=[[z * si], [z * si]], fmt="o", color="k", ms=4, capsize=3,
                    gid=f"estimate-{i}", label="estimates" if i == 0 else None)
    ax.set_xlabel("dose")
    ax.set_ylabel("effect over placebo" if fit.plac_adj else "response")
    ax.set_title(f"{fit.label} (gAIC {fit.gaic:.2f})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_candidates(models: Sequence[CandidateModel], design: DoseDesign, path: str | Path,
                    points: int = 201) -> None:
    """One panel per candidate: standardized shape scaled to a unit maximum."""
    models = label_models(models)
    if not models:
        raise ValidationError("nothing to plot: no candidate models")
    grid = np.linspace(0.0, design.max_dose, points)
    ncol = min(3, len(models))
    nrow = -(-len(models) // ncol)
    fig = Figure(figsize=(3 * ncol, 2.6 * nrow))
    for i, m in enumerate(models):
        ax = fig.add_subplot(nrow, ncol, i + 1)
        peak = max_standardized(m.family, m.guesstimates, design.max_dose)
        ax.plot(grid, eval_standardized(m.family, m.guesstimates, grid) / peak, gid=f"shape-{m.name}")
        ax.plot(design.doses, eval_standardized(m.family, m.guesstimates, design.doses) / peak, "o",
                ms=3, color="k")
        ax.set_title(m.name, fontsize=9)
        ax.set_ylim(-0.05, 1.1)
    fig.tight_layout()
    _save(fig, path)


def plot_report(report: dict, path: str | Path) -> None:
    """Coverage and mean RMSE against the per-arm sample size, per scenario."""
    results = report.get("results") or []
    if not results:
        raise ValidationError("empty simulation report: nothing to plot")
    names = sorted({r["scenario"] for r in results})
    fig = Figure(figsize=(7, 3 * len(names)))
    for i, name in enumerate(names):
        rows = sorted((r for r in results if r["scenario"] == name), key=lambda r: r["n_per_arm"])
        n = [r["n_per_arm"] for r in rows]
        ax_c = fig.add_subplot(len(names), 2, 2 * i + 1)
        for method in report.get("methods", []):
            cov = [r["coverage"][method]["mean"] for r in rows]
            ax_c.plot(n, [np.nan if c is None else c for c in cov], marker="o",
                      gid=f"coverage-{method}-{name}", label=method)
        ax_c.axhline(report.get("level", 0.9), color="0.5", ls="--", lw=0.8)
        ax_c.set_xscale("log")
        ax_c.set_title(f"{name}: coverage", fontsize=9)
        ax_c.set_xlabel("n per arm")
        ax_c.legend(fontsize=7)
        ax_r = fig.add_subplot(len(names), 2, 2 * i + 2)
        rmse = [np.nan if r["rmse_mean"] is None else r["rmse_mean"] for r in rows]
        ax_r.plot(n, rmse, marker="o", gid=f"rmse-{name}")
        ax_r.set_xscale("log")
        ax_r.set_title(f"{name}: RMSE", fontsize=9)
        ax_r.set_xlabel("n per arm")
    fig.tight_layout()
    _save(fig, path)
