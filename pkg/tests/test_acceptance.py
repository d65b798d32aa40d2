"""One test per acceptance criterion, each recording a pass/fail line."""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from conftest import (
    MIGRAINE_DOSES,
    MIGRAINE_N,
    MIGRAINE_RESP,
    NEURO_DOSES,
    NEURO_MU,
    compound_symmetric,
    random_spd,
    record_acceptance,
)
from dosekit.cli import run
from dosekit.contrasts import (
    collapse_to_placebo,
    optimal_contrast,
    optimal_contrast_placadj,
    placebo_collapse_matrix,
)
from dosekit.firststage import logistic_saturated
from dosekit.fitting import gls_fit, target_dose
from dosekit.io import dumps
from dosekit.mctest import mct_test
from dosekit.models import (
    Family,
    eval_full,
    gradient_full,
    guesstimate_from_anchor,
    quadratic_vertex,
)
from dosekit.simulation import StudyConfig, power_check, preset, preset_names, run_study
from oracles import noncentrality, projected_gradient_contrast, scaled_cov_error, simulated_theta_cov


def test_criterion_01_neuro_contrast_test(neuro_est, neuro_models):
    mct_test(neuro_est, neuro_models)  # warm caches so the timing measures one analysis
    t0 = time.perf_counter()
    res = mct_test(neuro_est, neuro_models)
    elapsed = time.perf_counter() - t0
    z = dict(zip(res.labels, res.z))
    sig = dict(zip(res.labels, res.significant))
    p_lin = float(res.adjusted_p[res.labels.index("linear")])
    expected_z = {"emax": 4.561, "quadratic": 3.680, "linear": 2.274, "exponential": 1.277}
    checks = {
        "z": all(abs(z[k] - v) <= 0.02 for k, v in expected_z.items()),
        "critical": abs(res.critical - 2.275) <= 0.01,
        "linear p": abs(p_lin - 0.0249) <= 0.002,
        "pattern": sig["emax"] and sig["quadratic"] and sig["linear"] and not sig["exponential"],
        "runtime": elapsed < 1.0,
    }
    details = (f"z={tuple(round(float(z[k]), 4) for k in expected_z)} q={res.critical:.4f} "
               f"p_linear={p_lin:.4f} significant={[k for k in res.labels if sig[k]]} t={elapsed:.2f}s")
    assert record_acceptance(1, checks, details)


def test_criterion_02_neuro_modeling(neuro_est):
    t0 = time.perf_counter()
    fits = [gls_fit(neuro_est, "emax", [(0.1, 10.0)]), gls_fit(neuro_est, "quadratic"),
            gls_fit(neuro_est, "linear")]
    td = target_dose(fits[0], 1.4)
    elapsed = time.perf_counter() - t0
    gaics = [f.gaic for f in fits]
    checks = {
        "emax theta": bool(np.all(np.abs(fits[0].theta - [-5.181, 2.180, 1.187]) <= 0.02)),
        "gAIC": bool(np.all(np.abs(np.array(gaics) - [10.66, 11.07, 24.22]) <= 0.1)),
        "target dose": td.dose is not None and abs(td.dose - 2.13) <= 0.02,
        "runtime": elapsed < 1.0,
    }
    details = (f"theta={np.round(fits[0].theta, 4).tolist()} gAIC={np.round(gaics, 3).tolist()} "
               f"TD={td.dose:.4f} t={elapsed:.2f}s")
    assert record_acceptance(2, checks, details)


def test_criterion_03_binary_example(migraine_models):
    t0 = time.perf_counter()
    est = logistic_saturated(MIGRAINE_DOSES, MIGRAINE_RESP, MIGRAINE_N)
    res = mct_test(est, migraine_models, alpha=0.025)
    sig_fit = gls_fit(est, "sigemax")
    quad_fit = gls_fit(est, "quadratic")
    elapsed = time.perf_counter() - t0
    checks = {
        "all significant": bool(res.significant.all()) and len(res.labels) == 5,
        "sigemax below quadratic": sig_fit.gaic < quad_fit.gaic,
        "runtime": elapsed < 5.0,
    }
    details = (f"z={np.round(res.z, 3).tolist()} q={res.critical:.4f} "
               f"gAIC sigemax={sig_fit.gaic:.3f} quadratic={quad_fit.gaic:.3f} t={elapsed:.2f}s")
    assert record_acceptance(3, checks, details)


def test_criterion_04_guesstimates():
    (ed50,) = guesstimate_from_anchor("emax", (10.0, 0.9), 30.0)
    (delta,) = guesstimate_from_anchor("exponential", (20.0, 0.3), 30.0)
    (dq,) = guesstimate_from_anchor("quadratic", (23.0, 1.0), 30.0)
    vertex = quadratic_vertex(dq)
    checks = {
        "ED50": abs(ed50 - 1.11) <= 0.005,
        "delta": abs(delta - 8.867) <= 0.005,
        "vertex": abs(vertex - 23.0) <= 0.5,
    }
    assert record_acceptance(4, checks, f"ED50={ed50:.4f} delta={delta:.4f} vertex={vertex:.3f}")


def test_criterion_05_placebo_adjusted_equivalence():
    rng = np.random.default_rng(2024)
    worst_nc, worst_dir = 0.0, 0.0
    for _ in range(200):
        k = int(rng.integers(3, 9))
        S = random_spd(rng, k)
        mu0 = np.concatenate([[0.0], rng.standard_normal(k - 1)])
        c = optimal_contrast(mu0, S)
        muC, SC = collapse_to_placebo(mu0, S)
        d = optimal_contrast_placadj(muC, SC)
        full = noncentrality(c, mu0, S)
        adj = noncentrality(d, muC, SC)
        worst_nc = max(worst_nc, abs(full - adj) / max(1.0, abs(full)))
        back = placebo_collapse_matrix(k).T @ d
        back /= np.linalg.norm(back)
        worst_dir = max(worst_dir, min(np.linalg.norm(back - c), np.linalg.norm(back + c)))
    checks = {"noncentrality": worst_nc <= 1e-10, "direction": worst_dir <= 1e-8}
    assert record_acceptance(5, checks, f"max noncentrality gap={worst_nc:.2e} max direction gap={worst_dir:.2e}")


def test_criterion_06_contrast_optimality():
    rng = np.random.default_rng(606)
    worst_gain, worst_affine = -np.inf, 0.0
    for _ in range(200):
        k = int(rng.integers(3, 9))
        S = random_spd(rng, k)
        mu0 = rng.standard_normal(k)
        c = optimal_contrast(mu0, S)
        _, best = projected_gradient_contrast(mu0, S, rng, restarts=100, iters=400)
        worst_gain = max(worst_gain, best - noncentrality(c, mu0, S))
        a, b = rng.uniform(0.1, 10.0), rng.uniform(-10.0, 10.0)
        worst_affine = max(worst_affine, float(np.abs(optimal_contrast(a * mu0 + b, S) - c).max()),
                           float(np.abs(optimal_contrast(-a * mu0 + b, S) + c).max()))
    checks = {"oracle": worst_gain <= 1e-9, "affine": worst_affine <= 1e-12}
    assert record_acceptance(6, checks, f"max oracle gain={worst_gain:.2e} max affine gap={worst_affine:.2e}")


def _fd_error(family: Family, theta: np.ndarray, x: np.ndarray) -> float:
    g = gradient_full(family, theta, x)
    worst = 0.0
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        e = np.zeros_like(theta)
        e[j] = h
        fd = (eval_full(family, theta + e, x) - eval_full(family, theta - e, x)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g[:, j] - fd) / np.maximum(np.abs(fd), 1e-3))))
    return worst


def test_criterion_07_gradients_and_covariance():
    x = np.array([0.0, 0.05, 0.2, 0.5, 0.8, 1.0])
    rng = np.random.default_rng(77)
    shape = {Family.LINEAR: lambda: [], Family.EMAX: lambda: [rng.uniform(0.05, 2)],
             Family.SIGEMAX: lambda: [rng.uniform(0.05, 2), rng.uniform(0.5, 5)],
             Family.QUADRATIC: lambda: [rng.uniform(-2, 0.5)], Family.EXPONENTIAL: lambda: [rng.uniform(0.1, 3)]}
    grad_err = max(_fd_error(f, np.array([rng.normal(), rng.uniform(0.5, 2), *shape[f]()]), x)
                   for f in Family for _ in range(20))
    emp, theory = simulated_theta_cov()
    cov_err = float(scaled_cov_error(emp, theory).max())
    raw = float(np.max(np.abs(emp / theory - 1)))
    checks = {"gradient": grad_err <= 1e-5, "covariance": cov_err <= 0.10}
    details = (f"max FD relative error={grad_err:.2e} covariance error (scaled by sqrt(s_ii s_jj))={cov_err:.3f} "
               f"raw ratio error={raw:.3f}")
    assert record_acceptance(7, checks, details)


def _coverage(name: str, n: int, methods: tuple[str, ...]) -> dict:
    sc = preset(name, n_per_arm=n, replicates=500, seed=7)
    return run_study([sc], StudyConfig(methods=methods, boot=500))["results"][0]["coverage"]


def test_criterion_08_simulation_coverage():
    t0 = time.perf_counter()
    quad = _coverage("table1-count-quadratic", 100, ("GLS",))["GLS"]["mean"]
    emax = _coverage("table1-count-emax", 30, ("GLS", "GLS-B"))
    expo = _coverage("table1-count-exponential", 30, ("GLS",))["GLS"]["mean"]
    elapsed = time.perf_counter() - t0
    gls, boot = emax["GLS"]["mean"], emax["GLS-B"]["mean"]
    checks = {
        "quadratic n=100 GLS": 0.87 <= quad <= 0.93,
        "emax n=30 GLS-B": 0.86 <= boot <= 0.94,
        "emax GLS-B vs GLS": boot >= gls - 0.01,
        "exponential n=30 GLS": expo < 0.85,
    }
    details = (f"quadratic GLS={quad:.3f} emax GLS={gls:.3f} GLS-B={boot:.3f} "
               f"exponential GLS={expo:.3f} t={elapsed:.0f}s")
    assert record_acceptance(8, checks, details)


def test_criterion_09_power_calibration():
    power = {name: power_check(preset(name, n_per_arm=30, replicates=500, seed=9), alpha=0.05)
             for name in preset_names()}
    off = {k: v for k, v in power.items() if abs(v - 0.80) > 0.03}
    checks = {name: name not in off for name in power}
    details = " ".join(f"{k.removeprefix('table1-')}={v:.3f}" for k, v in power.items())
    assert record_acceptance(9, checks, details)


@pytest.fixture
def analysis_inputs(tmp_path):
    mu = tmp_path / "mu.csv"
    mu.write_text("".join(f"{d},{m}\n" for d, m in zip(NEURO_DOSES, NEURO_MU)))
    cov = tmp_path / "cov.csv"
    cov.write_text(",".join(str(d) for d in NEURO_DOSES) + "\n" + "".join(",".join(repr(float(v)) for v in row) + "\n"
                           for row in compound_symmetric(5, 0.149, 0.0094)))
    models = tmp_path / "models.json"
    models.write_text(json.dumps({"models": [{"family": "emax", "guesstimates": [1.11]},
                                             {"family": "quadratic", "guesstimates": [-0.022]},
                                             {"family": "exponential", "guesstimates": [8.867]},
                                             {"family": "linear"}]}))
    data = tmp_path / "bin.csv"
    data.write_text("dose,successes,trials\n"
                    + "".join(f"{d},{s},{n}\n" for d, s, n in zip(MIGRAINE_DOSES, MIGRAINE_RESP, MIGRAINE_N)))
    corr = tmp_path / "R.csv"
    corr.write_text("1,0.5,0.3\n0.5,1,0.6\n0.3,0.6,1\n")
    est = ["--mu", str(mu), "--cov", str(cov)]
    return tmp_path, {
        "contrasts": ["contrasts", "--models", str(models), "--cov", str(cov)],
        "mctest": ["mctest", "--models", str(models), *est],
        "fit": ["fit", "--model", "emax", "--bounds", "0.1,10", *est, "--boot", "200", "--seed", "3", "--plot"],
        "mcpmod": ["mcpmod", "--models", str(models), *est, "--delta", "1.4", "--plot"],
        "firststage": ["firststage", "--data", str(data), "--type", "binary"],
        "simulate": ["simulate", "--scenario", "table1-count-emax", "--n", "30", "--reps", "8",
                     "--boot", "100", "--seed", "4", "--plot"],
        "crit": ["crit", "--corr", str(corr)],
    }


def test_criterion_10_determinism(analysis_inputs, capsys):
    tmp, commands = analysis_inputs
    same: dict[str, bool] = {}
    for name, argv in commands.items():
        outputs = []
        for attempt, extra in enumerate([[], [], ["--workers", "2"]] if name == "simulate" else [[], []]):
            out = tmp / f"{name}-{attempt}.json"
            args = list(argv)
            if args[-1] == "--plot":
                args.append(str(tmp / f"{name}-{attempt}.svg"))
            code = run([*args, *extra, "--out", str(out), "--quiet"])
            svg = tmp / f"{name}-{attempt}.svg"
            outputs.append((code, out.read_bytes(), svg.read_bytes() if svg.exists() else b""))
        same[name] = outputs[0][0] == 0 and all(o == outputs[0] for o in outputs)
    capsys.readouterr()
    scenarios = [preset("table1-binary-emax", n_per_arm=30, replicates=12, seed=5),
                 preset("table1-tte-exponential", n_per_arm=30, replicates=12, seed=5)]
    cfg = StudyConfig(boot=100)
    serial = dumps(run_study(scenarios, cfg))
    same["run_study serial twice"] = serial == dumps(run_study(scenarios, cfg))
    same["run_study parallel"] = serial == dumps(run_study(scenarios, StudyConfig(boot=100, workers=2)))
    details = f"{sum(same.values())}/{len(same)} outputs bit-identical ({', '.join(same)})"
    assert record_acceptance(10, same, details)
