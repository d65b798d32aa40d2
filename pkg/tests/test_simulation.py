from __future__ import annotations

import numpy as np
import pytest

from dosekit.errors import ValidationError
from dosekit.fitting import gls_fit
from dosekit.io import dumps
from dosekit.mctest import AnovaEstimate
from dosekit.models import Family
from dosekit.simulation import (
    SIM_DOSES,
    TABLE1,
    SimScenario,
    StudyConfig,
    desk_scenarios,
    first_stage,
    generate,
    max_effect_dose,
    power_check,
    preset,
    preset_names,
    rmse_dose_response,
    run_study,
    with_n,
)


class TestPresets:
    def test_names(self):
        names = preset_names()
        assert len(names) == 12 and "table1-count-emax" in names

    @pytest.mark.parametrize("name", preset_names())
    def test_truth_verbatim(self, name):
        _, endpoint, family = name.split("-")
        sc = preset(name)
        assert sc.truth == TABLE1[endpoint][family]
        assert sc.doses == SIM_DOSES

    def test_quadratic_conversion(self):
        sc = preset("table1-count-quadratic")
        np.testing.assert_allclose(sc.theta, [2.0, -2.0, 1.25 / -2.0])
        x = np.asarray(SIM_DOSES)
        np.testing.assert_allclose(sc.mean_curve(), 2.0 - 2.0 * x + 1.25 * x**2)

    def test_unknown(self):
        with pytest.raises(ValidationError):
            preset("table1-count-logistic")
        with pytest.raises(ValidationError):
            preset("count-emax")

    def test_overrides(self):
        sc = preset("table1-normal-emax", n_per_arm=50, seed=3)
        assert sc.n_per_arm == 50 and with_n(sc, 10).n_per_arm == 10
        assert len(desk_scenarios(["table1-normal-emax"], (10, 20), replicates=5)) == 2


class TestGenerator:
    def test_deterministic(self):
        sc = preset("table1-count-emax", n_per_arm=20, seed=4)
        a, b, c = generate(sc, 3), generate(sc, 3), generate(sc, 4)
        assert np.array_equal(a["resp"], b["resp"]) and not np.array_equal(a["resp"], c["resp"])

    def test_independent_of_other_scenarios(self):
        a = generate(preset("table1-normal-emax", n_per_arm=20, seed=1), 0)
        b = generate(preset("table1-normal-exponential", n_per_arm=20, seed=1), 0)
        assert not np.array_equal(a["resp"] - a["resp"].mean(), b["resp"] - b["resp"].mean())

    def test_normal_law_of_large_numbers(self):
        sc = preset("table1-normal-emax", n_per_arm=20000, seed=2)
        est = first_stage(sc, generate(sc, 0))
        np.testing.assert_allclose(est.mu, sc.mean_curve(), atol=4 / np.sqrt(20000))
        assert np.diag(est.S) * 20000 == pytest.approx(np.ones(6), abs=0.05)

    def test_binary_placebo_rate(self):
        sc = preset("table1-binary-emax", n_per_arm=200000, seed=2)
        data = generate(sc, 0)
        rate = data["successes"][0] / data["trials"][0]
        assert rate == pytest.approx(0.150, abs=0.003)

    def test_count_overdispersion(self):
        sc = preset("table1-count-emax", n_per_arm=50000, seed=2)
        data = generate(sc, 0)
        y = data["resp"][data.dose == 0]
        m = np.exp(2.0)
        assert y.mean() == pytest.approx(m, rel=0.02)
        assert y.var() == pytest.approx(m + m * m, rel=0.05)

    def test_censoring_at_ten(self):
        sc = SimScenario("tte-check", "tte", Family.LINEAR, (2.0, 0.0, 0.0), n_per_arm=50000, seed=1)
        data = generate(sc, 0)
        assert data["time"].max() == 10.0
        frac = 1 - data["event"].mean()
        assert frac == pytest.approx(np.exp(-10 / np.exp(2.0)), abs=0.005)

    def test_tte_placebo_censoring_tiny(self):
        sc = preset("table1-tte-emax", n_per_arm=1000, seed=1)
        data = generate(sc, 0)
        # mean time 1 at placebo: censoring probability exp(-10)
        assert data["event"][data.dose == 0].all()


class TestRmse:
    def test_exact_fit_zero(self):
        sc = preset("table1-normal-emax")
        est = AnovaEstimate(sc.design, sc.mean_curve(), np.eye(6) * 0.01)
        fit = gls_fit(est, "emax", [(0.001, 5.0)])
        assert rmse_dose_response(fit, sc) == pytest.approx(0.0, abs=1e-6)

    def test_vectors(self):
        assert rmse_dose_response([1.0, 2.0], [1.0, 4.0], doses=[0, 1]) == pytest.approx(np.sqrt(2.0))
        with pytest.raises(ValidationError):
            rmse_dose_response([1.0], [1.0])

    def test_placebo_adjusted_compares_effects(self):
        sc = preset("table1-tte-emax")
        truth = sc.mean_curve()
        est = AnovaEstimate(sc.design.active(), truth[1:] - truth[0], np.eye(5) * 0.01)
        fit = gls_fit(est, "emax", [(0.001, 5.0)])
        assert rmse_dose_response(fit, sc) == pytest.approx(0.0, abs=1e-6)

    def test_decreasing_in_n(self):
        scs = desk_scenarios(["table1-normal-emax"], (30, 100, 300), replicates=100, seed=5)
        rep = run_study(scs, StudyConfig(methods=("GLS",)))
        rmse = [r["rmse_mean"] for r in rep["results"]]
        assert rmse[0] > rmse[1] > rmse[2]


class TestStudy:
    def _small(self):
        return [preset("table1-count-emax", n_per_arm=30, replicates=12, seed=9),
                preset("table1-tte-quadratic", n_per_arm=30, replicates=12, seed=9)]

    def test_report_structure(self):
        rep = run_study(self._small(), StudyConfig(boot=100))
        assert rep["schema"] == "dosekit/v1" and rep["methods"] == ["GLS", "GLS-B"]
        for r in rep["results"]:
            f = r["failures"]
            assert r["n_analyzed"] + f["first_stage"] + f["fit"] == r["replicates"]
            for method in ("GLS", "GLS-B"):
                cov = r["coverage"][method]
                assert all(0 <= v <= 1 for v in cov["per_parameter"].values())
                assert 0 <= cov["joint"] <= cov["mean"] <= 1
        tte = rep["results"][1]
        assert list(tte["coverage"]["GLS"]["per_parameter"]) == ["theta1", "theta2"]

    def test_serial_equals_parallel(self):
        serial = run_study(self._small(), StudyConfig(boot=100))
        parallel = run_study(self._small(), StudyConfig(boot=100, workers=2))
        assert dumps(serial) == dumps(parallel)

    def test_repeatable(self):
        cfg = StudyConfig(methods=("GLS",))
        assert dumps(run_study(self._small(), cfg)) == dumps(run_study(self._small(), cfg))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            StudyConfig(methods=("OLS",))
        with pytest.raises(ValidationError):
            StudyConfig(boot=50)
        with pytest.raises(ValidationError):
            StudyConfig(workers=0)
        with pytest.raises(ValidationError):
            run_study([])


class TestPower:
    def test_max_effect_dose(self):
        assert max_effect_dose(preset("table1-count-emax")) == 5
        assert max_effect_dose(preset("table1-count-quadratic")) == 4

    def test_large_n_full_power(self):
        sc = preset("table1-normal-emax", n_per_arm=200, replicates=50, seed=1)
        assert power_check(sc) == 1.0

    def test_null_size(self):
        sc = SimScenario("null", "normal", Family.LINEAR, (0.0, 0.0, 0.0), n_per_arm=30, replicates=2000, seed=2)
        assert power_check(sc, alpha=0.05) == pytest.approx(0.05, abs=0.015)
