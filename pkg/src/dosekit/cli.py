"""``dosekit`` command-line interface.

Subcommands: ``contrasts``, ``mctest``, ``fit``, ``mcpmod``, ``firststage``,
``simulate`` and ``crit``.  Each writes JSON (schema ``dosekit/v1``) to
``--out`` or standard output and a short human-readable summary to
standard error.

Exit codes: 0 on success, 2 for invalid input, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from dosekit import __version__
from dosekit.contrasts import contrast_matrix
from dosekit.errors import DoseKitError, NumericalError, ValidationError
from dosekit.firststage import cox_mle, estimate, negbin_mle
from dosekit.fitting import (
    AveragedModel,
    FittedModel,
    bootstrap,
    gls_fit,
    predict_with_ci,
    select_model,
    target_dose,
    wald_intervals,
)
from dosekit.io import (
    SCHEMA,
    dumps,
    estimate_from_json,
    estimate_to_json,
    load_estimate,
    matrix_csv,
    read_json,
    read_matrix,
    read_models,
    read_subject_data,
)
from dosekit.mctest import AnovaEstimate, MctResult, mct_test, reference_set
from dosekit.models import DoseDesign
from dosekit.mvn import QmcConfig, check_corr, critical_value
from dosekit.simulation import (
    DESK_SAMPLE_SIZES,
    FULL_SAMPLE_SIZES,
    METHODS,
    StudyConfig,
    preset,
    preset_names,
    run_study,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _default_seed() -> int:
    raw = os.environ.get("DOSEKIT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"DOSEKIT_SEED must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Shared argument groups
# ---------------------------------------------------------------------------

def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write JSON here instead of standard output")
    p.add_argument("--quiet", action="store_true", help="suppress the summary on standard error")


def _add_estimate(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu", help="estimates CSV (dose,estimate rows or one column)")
    p.add_argument("--cov", help="covariance CSV (K x K, optional header row of doses)")
    p.add_argument("--estimate", help="estimate JSON written by 'dosekit firststage'")
    p.add_argument("--plac-adj", action="store_true",
                   help="estimates are effects over placebo at the active doses")
    p.add_argument("--direction", choices=("inc", "dec"), default="inc",
                   help="direction of a beneficial effect (default inc)")


def _add_mvn(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mvn-seed", type=int, default=QmcConfig.seed, help="seed of the lattice shifts")
    p.add_argument("--mvn-tol", type=float, default=QmcConfig.target_error,
                   help="target absolute error of MVN probabilities")
    p.add_argument("--mvn-points", type=int, default=QmcConfig.points, help="lattice points per shift")
    p.add_argument("--mvn-max-points", type=int, default=0,
                   help="allow the lattice to grow up to this many points")


def _qmc(args: argparse.Namespace) -> QmcConfig:
    return QmcConfig(points=args.mvn_points, seed=args.mvn_seed, target_error=args.mvn_tol,
                     max_points=args.mvn_max_points)


def _parse_bounds(text: str | None) -> list[tuple[float, float]] | None:
    if text is None:
        return None
    pairs = []
    for chunk in text.split(";"):
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ValidationError(f"--bounds expects lo,hi[;lo,hi], got {text!r}")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ValidationError(f"--bounds expects numbers, got {text!r}") from None
    return pairs


def _load(args: argparse.Namespace, doses: np.ndarray | None = None) -> AnovaEstimate:
    if args.estimate:
        if args.mu or args.cov:
            raise ValidationError("give either --estimate or --mu/--cov, not both")
        est = estimate_from_json(read_json(args.estimate), args.estimate)
        if args.plac_adj and not est.plac_adj:
            raise ValidationError("--plac-adj conflicts with an estimate that includes placebo")
        return est
    if not (args.mu and args.cov):
        raise ValidationError("estimates are required: --mu and --cov, or --estimate")
    return load_estimate(args.mu, args.cov, doses, plac_adj=args.plac_adj)


def _direction(args: argparse.Namespace) -> str:
    return "increase" if args.direction == "inc" else "decrease"


# ---------------------------------------------------------------------------
# Report builders
# ---------------------------------------------------------------------------

def _mct_json(res: MctResult) -> dict[str, Any]:
    return {
        "models": list(res.labels),
        "z": res.z.tolist(),
        "critical": res.critical,
        "adj_p": res.adjusted_p.tolist(),
        "significant": res.significant.tolist(),
        "alpha": res.alpha,
        "contrasts": res.contrasts.matrix.tolist(),
        "corr": res.corr.tolist(),
    }


def _fit_json(fit: FittedModel, level: float) -> dict[str, Any]:
    ci = wald_intervals(fit, level)
    return {
        "label": fit.label,
        "family": fit.family.value,
        "param_names": list(fit.param_names),
        "theta": fit.theta.tolist(),
        "criterion": fit.criterion,
        "gaic": fit.gaic,
        "plac_adj": fit.plac_adj,
        "at_bound": fit.at_bound.tolist(),
        "theta_cov": None if fit.theta_cov is None else fit.theta_cov.tolist(),
        "wald_ci": None if ci is None else ci.tolist(),
        "level": level,
    }


def _fit_table(fit: FittedModel) -> str:
    rows = [f"{fit.label}: gAIC {fit.gaic:.3f}, criterion {fit.criterion:.4f}"]
    se = None if fit.theta_cov is None else np.sqrt(np.diag(fit.theta_cov))
    for i, (name, val) in enumerate(zip(fit.param_names, fit.theta)):
        extra = "" if se is None else f"  (se {se[i]:.4f})"
        rows.append(f"  {name:>8} {val:10.4f}{extra}")
    if fit.at_bound.any():
        rows.append("  note: a nonlinear parameter is on its bound; no Wald covariance")
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_contrasts(args: argparse.Namespace) -> tuple[Any, str]:
    models, doses = read_models(args.models)
    labels, S = read_matrix(args.cov)
    if doses is None:
        doses = labels
    if doses is None:
        raise ValidationError("doses are unknown: add 'doses' to the models file or a header to the covariance")
    design = DoseDesign(doses, plac_adj=args.plac_adj)
    cm = contrast_matrix(models, design, S, plac_adj=args.plac_adj)
    text = matrix_csv(list(cm.labels), cm.matrix)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    payload = {"schema": SCHEMA, "kind": "contrasts", "doses": design.doses.tolist(),
               "models": list(cm.labels), "matrix": cm.matrix.tolist()}
    return payload, text


def _run_mct(args: argparse.Namespace, est: AnovaEstimate, models) -> MctResult:
    test_est = est.negated() if args.direction == "dec" else est
    planned = None
    if args.planned_cov:
        _, planned = read_matrix(args.planned_cov)
    return mct_test(test_est, models, alpha=args.alpha,
                    contrast_source="planned" if planned is not None else "observed",
                    planned_S=planned, cfg=_qmc(args))


def cmd_mctest(args: argparse.Namespace) -> tuple[Any, str]:
    models, doses = read_models(args.models)
    est = _load(args, doses)
    res = _run_mct(args, est, models)
    payload = {"schema": SCHEMA, "kind": "mctest", "direction": _direction(args), **_mct_json(res)}
    return payload, res.table()


def cmd_fit(args: argparse.Namespace) -> tuple[Any, str]:
    est = _load(args)
    fit = gls_fit(est, args.model, _parse_bounds(args.bounds))
    payload: dict[str, Any] = {"schema": SCHEMA, "kind": "fit", "estimate": estimate_to_json(est),
                               "fit": _fit_json(fit, args.level)}
    text = _fit_table(fit)
    if args.boot:
        q = ((1 - args.level) / 2, (1 + args.level) / 2)
        boot = bootstrap(est, args.model, _parse_bounds(args.bounds), B=args.boot, seed=args.seed, quantiles=q)
        payload["bootstrap"] = {
            "draws": boot.n_draws,
            "failed": boot.n_failed,
            "seed": args.seed,
            "quantiles": list(q),
            "theta_ci": boot.theta_intervals.tolist(),
            "doses": boot.doses.tolist(),
            "curve_ci": boot.curve_intervals.tolist(),
        }
        text += f"\n  bootstrap: {boot.n_draws} draws, {boot.n_failed} failed"
    if fit.theta_cov is not None:
        band = predict_with_ci(fit, est.doses, args.level)
        payload["prediction"] = {"doses": band.doses.tolist(), "fit": band.fit.tolist(),
                                 "lower": band.lower.tolist(), "upper": band.upper.tolist()}
    if args.plot:
        from dosekit.plotting import plot_fit

        plot_fit(fit, args.plot, args.level)
    return payload, text


def cmd_mcpmod(args: argparse.Namespace) -> tuple[Any, str]:
    models, doses = read_models(args.models)
    est = _load(args, doses)
    res = _run_mct(args, est, models)
    payload: dict[str, Any] = {"schema": SCHEMA, "kind": "mcpmod", "direction": _direction(args),
                               "delta": args.delta, "mctest": _mct_json(res)}
    lines = [res.table()]
    refs = reference_set(res, models)
    payload["reference_set"] = [m.name for m in refs]
    if not refs:
        payload.update(fits=[], selected=None, target_dose=None)
        lines.append("\nNo significant dose-response signal: modeling step skipped.")
        return payload, "\n".join(lines)

    # one fit per family (guesstimates do not enter the fit); a family
    # inherits the largest statistic among its candidates
    fits: list[FittedModel] = []
    zfam: list[float] = []
    for m in refs:
        zm = float(res.z[res.labels.index(m.name)])
        if any(f.family is m.family for f in fits):
            continue
        fits.append(gls_fit(est, m.family, label=m.family.value))
        zfam.append(zm)
    payload["fits"] = [_fit_json(f, args.level) for f in fits]
    lines.append("")
    lines.append("gAIC: " + ", ".join(f"{f.label} {f.gaic:.2f}" for f in fits))
    chosen: FittedModel | AveragedModel
    if args.selection == "average":
        chosen = AveragedModel.from_fits(fits)
        payload["selected"] = "average"
        payload["weights"] = dict(zip([f.label for f in fits], chosen.weights.tolist()))
    else:
        label = select_model(fits, args.selection, z=zfam)
        chosen = next(f for f in fits if f.label == label)
        payload["selected"] = label
    lines.append(f"Selected: {payload['selected']}")
    if args.delta is not None:
        td = target_dose(chosen, args.delta, _direction(args), max_dose=est.design.max_dose)
        payload["target_dose"] = {"dose": td.dose, "delta": td.delta, "direction": td.direction,
                                  "model": td.source}
        lines.append(f"Target dose (delta {args.delta:g}): "
                     + ("not reached" if td.dose is None else f"{td.dose:.4f}"))
    else:
        payload["target_dose"] = None
    if args.plot:
        from dosekit.plotting import plot_fit

        plot_fit(chosen if isinstance(chosen, FittedModel) else fits[0], args.plot, args.level)
    return payload, "\n".join(lines)


def cmd_firststage(args: argparse.Namespace) -> tuple[Any, str]:
    data = read_subject_data(args.data, args.type)
    extra: dict[str, Any] = {}
    if args.type == "count":
        nb = negbin_mle(data.dose, data["resp"])
        est = nb.estimate
        extra["overdispersion_k"] = nb.k
    elif args.type == "tte":
        cf = cox_mle(data.dose, data["time"], data["event"])
        est = cf.estimate
        extra.update(loglik=cf.loglik, gradient_norm=cf.gradient_norm)
    else:
        est = estimate(data, haldane=args.haldane)
    payload = {**estimate_to_json(est), "endpoint": args.type, **extra}
    if args.mu_csv:
        Path(args.mu_csv).write_text(
            "dose,estimate\n" + "".join(f"{d!r},{m!r}\n" for d, m in zip(est.doses.tolist(), est.mu.tolist())),
            encoding="utf-8",
        )
    if args.cov_csv:
        Path(args.cov_csv).write_text(matrix_csv([repr(d) for d in est.doses.tolist()], est.S), encoding="utf-8")
    se = np.sqrt(np.diag(est.S))
    text = "\n".join(f"dose {d:>8g}: {m:9.4f} (se {s:.4f})" for d, m, s in zip(est.doses, est.mu, se))
    return payload, text


def cmd_simulate(args: argparse.Namespace) -> tuple[Any, str]:
    names = args.scenario or []
    if not names:
        raise ValidationError("at least one --scenario is required (or 'all')")
    if "all" in names:
        names = preset_names()
    if args.full_paper:
        sizes, reps = list(FULL_SAMPLE_SIZES), 2000
    else:
        sizes = args.n or list(DESK_SAMPLE_SIZES)
        reps = args.reps
    scen = [preset(nm, n_per_arm=n, replicates=reps, seed=args.seed) for nm in names for n in sizes]
    cfg = StudyConfig(methods=tuple(args.methods), boot=args.boot, level=args.level, workers=args.workers)
    report = run_study(scen, cfg)
    if args.plot:
        from dosekit.plotting import plot_report

        plot_report(report, args.plot)
    lines = []
    for r in report["results"]:
        cov = ", ".join(f"{m} {r['coverage'][m]['mean']:.3f}" for m in cfg.methods
                        if r["coverage"][m]["mean"] is not None)
        rmse = "n/a" if r["rmse_mean"] is None else f"{r['rmse_mean']:.4f}"
        lines.append(f"{r['scenario']} n={r['n_per_arm']}: coverage {cov}; RMSE {rmse}")
    return report, "\n".join(lines)


def cmd_crit(args: argparse.Namespace) -> tuple[Any, str]:
    _, R = read_matrix(args.corr)
    R = check_corr(R)
    q = critical_value(R, args.alpha, _qmc(args))
    return ({"schema": SCHEMA, "kind": "critical-value", "alpha": args.alpha, "dimension": R.shape[0],
             "critical": q}, f"critical value {q:.4f} (alpha {args.alpha:g}, one-sided)")


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dosekit", description="Dose-finding with contrast tests and GLS modeling.")
    parser.add_argument("--version", action="version", version=f"dosekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("contrasts", help="optimal contrast matrix for candidate models")
    p.add_argument("--models", required=True, help="models JSON")
    p.add_argument("--cov", required=True, help="covariance CSV")
    p.add_argument("--plac-adj", action="store_true")
    p.add_argument("--csv", help="also write the matrix as CSV with model-name headers")
    _add_output(p)
    p.set_defaults(func=cmd_contrasts)

    p = sub.add_parser("mctest", help="multiple contrast test")
    p.add_argument("--models", required=True)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--planned-cov", help="covariance for contrasts (default: observed)")
    _add_estimate(p)
    _add_mvn(p)
    _add_output(p)
    p.set_defaults(func=cmd_mctest)

    p = sub.add_parser("fit", help="GLS dose-response fit")
    p.add_argument("--model", required=True, help="model family")
    p.add_argument("--bounds", help="bounds of the nonlinear parameters: lo,hi[;lo,hi]")
    p.add_argument("--boot", type=int, default=0, help="parametric bootstrap draws (>= 100)")
    p.add_argument("--seed", type=int, default=None, help="bootstrap seed (default DOSEKIT_SEED or 0)")
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--plot", help="write an SVG of the fit")
    _add_estimate(p)
    _add_output(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mcpmod", help="test, select, fit and estimate the target dose")
    p.add_argument("--models", required=True)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--delta", type=float, help="clinically relevant effect for the target dose")
    p.add_argument("--selection", choices=("min-gaic", "max-z", "average"), default="min-gaic")
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--planned-cov")
    p.add_argument("--plot")
    _add_estimate(p)
    _add_mvn(p)
    _add_output(p)
    p.set_defaults(func=cmd_mcpmod)

    p = sub.add_parser("firststage", help="first-stage estimates from subject-level CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--type", required=True, choices=("normal", "binary", "count", "tte"))
    p.add_argument("--haldane", action="store_true", help="add 0.5 to binary cells")
    p.add_argument("--mu-csv", help="also write estimates as CSV")
    p.add_argument("--cov-csv", help="also write the covariance as CSV")
    _add_output(p)
    p.set_defaults(func=cmd_firststage)

    p = sub.add_parser("simulate", help="coverage and RMSE simulations")
    p.add_argument("--scenario", action="append", help=f"preset name or 'all' ({', '.join(preset_names()[:2])}, ...)")
    p.add_argument("--n", type=int, action="append", help="patients per arm (repeatable)")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--boot", type=int, default=500)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full-paper", action="store_true", help="2000 replicates at n = 15 ... 1000")
    p.add_argument("--plot")
    _add_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crit", help="critical value of the max-contrast test")
    p.add_argument("--corr", required=True, help="correlation matrix CSV")
    p.add_argument("--alpha", type=float, default=0.025)
    _add_mvn(p)
    _add_output(p)
    p.set_defaults(func=cmd_crit)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            payload, text = args.func(args)
        notes = list(dict.fromkeys(str(w.message) for w in caught))
        if isinstance(payload, dict) and notes:
            payload["warnings"] = notes
        out = dumps(payload)
        if args.out:
            Path(args.out).write_text(out, encoding="utf-8")
        else:
            sys.stdout.write(out)
        if not args.quiet:
            for n in notes:
                sys.stderr.write(f"warning: {n}\n")
            if text:
                sys.stderr.write(text.rstrip("\n") + "\n")
        return EXIT_OK
    except (ValidationError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"dosekit: error: {exc}\n")
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"dosekit: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except DoseKitError as exc:
        sys.stderr.write(f"dosekit: error: {exc}\n")
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
