"""Operating-characteristics simulations for the GLS Mod step.

Preset scenarios ``table1-<endpoint>-<family>`` hold the published truths
for binary, count, time-to-event and normal endpoints with Emax, quadratic
and exponential shapes on the doses ``(0, 0.05, 0.2, 0.5, 0.8, 1)``.  Each
replicate draws data, runs the matching first-stage estimator, fits the
true family by GLS and checks 90% Wald (``GLS``) and parametric bootstrap
(``GLS-B``) intervals for the parameters.

Random streams are keyed by ``(seed, scenario, n, replicate)``, so results
do not depend on execution order or on the number of worker processes.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from dosekit.errors import DoseKitError, ValidationError
from dosekit.firststage import ENDPOINTS, SubjectData, estimate
from dosekit.fitting import FittedModel, bootstrap, gls_fit, quadratic_beta, wald_intervals
from dosekit.mctest import AnovaEstimate
from dosekit.models import DoseDesign, Family, eval_full

SIM_DOSES = (0.0, 0.05, 0.2, 0.5, 0.8, 1.0)
DESK_SAMPLE_SIZES = (30, 100, 300)
FULL_SAMPLE_SIZES = (15, 30, 50, 100, 300, 1000)
STUDY_BOUNDS = {Family.EMAX: ((0.001, 5.0),), Family.EXPONENTIAL: ((0.05, 5.0),)}
METHODS = ("GLS", "GLS-B")

# published truths (theta0, theta1, theta2); quadratic rows are polynomial
# coefficients theta0 + theta1 x + theta2 x^2
TABLE1: dict[str, dict[str, tuple[float, float, float]]] = {
    "binary": {
        "quadratic": (-1.734, 4.335, -2.7094),
        "emax": (-1.734, 1.8207, 0.05),
        "exponential": (-1.734, 0.01176, 0.2),
    },
    "count": {
        "quadratic": (2.0, -2.0, 1.25),
        "emax": (2.0, -0.84, 0.05),
        "exponential": (2.0, -0.005427, 0.2),
    },
    "tte": {
        "quadratic": (0.0, -1.8876, 1.1797),
        "emax": (0.0, -0.7928, 0.05),
        "exponential": (0.0, -0.005122, 0.2),
    },
    "normal": {
        "quadratic": (0.0, 2.61, 1.633),
        "emax": (0.0, 1.097, 0.05),
        "exponential": (0.0, 0.007089, 0.2),
    },
}


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting.

    ``truth`` is in the published parameterization (polynomial
    coefficients for the quadratic family); :attr:`theta` converts it to
    ``(e0, scale, *theta0)``.
    """

    name: str
    endpoint: str
    family: Family
    truth: tuple[float, ...]
    n_per_arm: int = 30
    replicates: int = 500
    seed: int = 0
    doses: tuple[float, ...] = SIM_DOSES
    sigma: float = 1.0
    overdispersion: float = 1.0
    censor_time: float = 10.0

    def __post_init__(self) -> None:
        if self.endpoint not in ENDPOINTS:
            raise ValidationError(f"unknown endpoint {self.endpoint!r}")
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "truth", tuple(float(t) for t in self.truth))
        if self.n_per_arm < 2:
            raise ValidationError("at least 2 subjects per arm are needed")
        if self.replicates < 1:
            raise ValidationError("at least one replicate is needed")
        DoseDesign(self.doses)

    @property
    def theta(self) -> NDArray[np.float64]:
        t = np.array(self.truth)
        if self.family is Family.QUADRATIC:
            return np.array([t[0], t[1], t[2] / t[1]])
        return t

    @property
    def design(self) -> DoseDesign:
        return DoseDesign(self.doses)

    @property
    def plac_adj(self) -> bool:
        return self.endpoint == "tte"

    def mean_curve(self, x: ArrayLike | None = None) -> NDArray[np.float64]:
        x = np.asarray(self.doses if x is None else x, dtype=float)
        return np.asarray(eval_full(self.family, self.theta, x), dtype=float)

    def stream_key(self) -> int:
        return zlib.crc32(f"{self.name}/n={self.n_per_arm}".encode())


def preset_names() -> list[str]:
    return [f"table1-{e}-{f}" for e in TABLE1 for f in TABLE1[e]]


def preset(name: str, **overrides) -> SimScenario:
    """Scenario from a ``table1-<endpoint>-<family>`` name."""
    parts = name.split("-")
    if len(parts) != 3 or parts[0] != "table1" or parts[1] not in TABLE1 or parts[2] not in TABLE1[parts[1]]:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(preset_names())}")
    return SimScenario(name=name, endpoint=parts[1], family=Family.parse(parts[2]),
                       truth=TABLE1[parts[1]][parts[2]], **overrides)


def _rng(scenario: SimScenario, replicate: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([scenario.seed, scenario.stream_key(), replicate, stream])


def generate(scenario: SimScenario, replicate: int) -> SubjectData:
    """Simulated trial data for one replicate (deterministic in its index)."""
    rng = _rng(scenario, replicate)
    n = scenario.n_per_arm
    doses = np.asarray(scenario.doses)
    f = scenario.mean_curve()
    if scenario.endpoint == "binary":
        succ = rng.binomial(n, special.expit(f))
        return SubjectData("binary", doses, {"successes": succ, "trials": np.full(doses.size, n)})
    dose = np.repeat(doses, n)
    mean = np.repeat(f, n)
    if scenario.endpoint == "normal":
        return SubjectData("normal", dose, {"resp": mean + scenario.sigma * rng.standard_normal(dose.size)})
    if scenario.endpoint == "count":
        mu = np.exp(mean)
        k = scenario.overdispersion
        return SubjectData("count", dose, {"resp": rng.negative_binomial(k, k / (k + mu))})
    t = rng.exponential(np.exp(mean))
    event = t <= scenario.censor_time
    return SubjectData("tte", dose, {"time": np.minimum(t, scenario.censor_time), "event": event})


def first_stage(scenario: SimScenario, data: SubjectData) -> AnovaEstimate:
    """First-stage estimate on the log-mean / logit / mean scale of the truth.

    Cox log hazard ratios are negated: with exponential times the log mean
    difference equals minus the log hazard ratio.
    """
    if data.endpoint == "binary":
        s, n = data["successes"], data["trials"]
        boundary = bool(np.any((s == 0) | (s == n)))
        return estimate(data, haldane=boundary)
    est = estimate(data)
    if data.endpoint == "tte":
        est = est.negated()
    return est


def rmse_dose_response(fit: FittedModel | ArrayLike, truth: SimScenario | ArrayLike,
                       doses: ArrayLike | None = None) -> float:
    """Root mean squared error of the fitted curve over the design doses.

    Placebo-adjusted fits are compared with the true effect over placebo.
    """
    if isinstance(truth, SimScenario):
        x = np.asarray(truth.doses if doses is None else doses, dtype=float)
        true = truth.mean_curve(x)
    else:
        if doses is None:
            raise ValidationError("doses are required with an explicit truth vector")
        x = np.asarray(doses, dtype=float)
        true = np.asarray(truth, dtype=float)
    if isinstance(fit, FittedModel):
        est = fit.predict(x)
        if fit.plac_adj:
            true = true - true[0] if x[0] == 0 else true - truth.mean_curve(0.0)
    else:
        est = np.asarray(fit, dtype=float)
    return float(np.sqrt(np.mean((est - true) ** 2)))


def _reported(family: Family, theta: NDArray) -> NDArray:
    """Parameters in the published parameterization."""
    return quadratic_beta(theta) if family is Family.QUADRATIC else theta


def _wald_reported(fit: FittedModel, level: float) -> NDArray | None:
    if fit.theta_cov is None:
        return None
    if fit.family is not Family.QUADRATIC:
        return wald_intervals(fit, level)
    _, b1, delta = fit.theta
    J = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, delta, b1]])
    cov = J @ fit.theta_cov @ J.T
    beta = quadratic_beta(fit.theta)
    z = special.ndtri(0.5 + level / 2.0)
    se = np.sqrt(np.diag(cov))
    return np.column_stack([beta - z * se, beta + z * se])


@dataclass(frozen=True)
class StudyConfig:
    methods: tuple[str, ...] = METHODS
    boot: int = 500
    level: float = 0.9
    workers: int = 1

    def __post_init__(self) -> None:
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValidationError(f"unknown method(s) {sorted(bad)}; choose from {METHODS}")
        if "GLS-B" in self.methods and self.boot < 100:
            raise ValidationError("the bootstrap needs at least 100 draws")
        if not 0 < self.level < 1:
            raise ValidationError("level must lie in (0, 1)")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")


@dataclass
class ReplicateOutcome:
    status: str  # ok | first-stage | fit
    rmse: float = np.nan
    covered: dict[str, NDArray | None] = field(default_factory=dict)
    message: str = ""


def run_replicate(scenario: SimScenario, replicate: int, cfg: StudyConfig) -> ReplicateOutcome:
    data = generate(scenario, replicate)
    try:
        est = first_stage(scenario, data)
    except DoseKitError as exc:
        return ReplicateOutcome("first-stage", message=str(exc))
    bounds = STUDY_BOUNDS.get(scenario.family)
    try:
        fit = gls_fit(est, scenario.family, bounds)
    except DoseKitError as exc:
        return ReplicateOutcome("fit", message=str(exc))
    free = slice(1, None) if est.plac_adj else slice(None)
    truth = _reported(scenario.family, scenario.theta)[free]
    out = ReplicateOutcome("ok", rmse=rmse_dose_response(fit, scenario))
    for method in cfg.methods:
        if method == "GLS":
            ci = _wald_reported(fit, cfg.level)
        else:
            q = ((1 - cfg.level) / 2, (1 + cfg.level) / 2)
            seed = [scenario.seed, scenario.stream_key(), replicate, 1]
            try:
                boot = bootstrap(est, scenario.family, bounds, B=cfg.boot, seed=seed, quantiles=q)
                ci = np.quantile(_reported(scenario.family, boot.thetas), q, axis=0).T
            except DoseKitError:
                ci = None
        out.covered[method] = None if ci is None else (ci[free, 0] <= truth) & (truth <= ci[free, 1])
    return out


def _run_chunk(args: tuple[SimScenario, Sequence[int], StudyConfig]) -> list[ReplicateOutcome]:
    scenario, reps, cfg = args
    return [run_replicate(scenario, r, cfg) for r in reps]


def _summarize(scenario: SimScenario, outcomes: list[ReplicateOutcome], cfg: StudyConfig) -> dict:
    ok = [o for o in outcomes if o.status == "ok"]
    names = list(_param_names(scenario))
    summary: dict = {
        "scenario": scenario.name,
        "endpoint": scenario.endpoint,
        "family": scenario.family.value,
        "truth": list(scenario.truth),
        "n_per_arm": scenario.n_per_arm,
        "replicates": scenario.replicates,
        "seed": scenario.seed,
        "failures": {
            "first_stage": sum(o.status == "first-stage" for o in outcomes),
            "fit": sum(o.status == "fit" for o in outcomes),
        },
        "n_analyzed": len(ok),
        "rmse_mean": float(np.mean([o.rmse for o in ok])) if ok else None,
        "coverage": {},
        "level": cfg.level,
        "bootstrap_draws": cfg.boot if "GLS-B" in cfg.methods else None,
    }
    for method in cfg.methods:
        rows = [o.covered[method] for o in ok]
        no_ci = sum(r is None for r in rows)
        mat = np.array([np.zeros(len(names), bool) if r is None else r for r in rows]).reshape(-1, len(names))
        per = mat.mean(axis=0) if len(rows) else np.full(len(names), np.nan)
        summary["coverage"][method] = {
            "per_parameter": dict(zip(names, map(float, per))),
            "mean": float(np.mean(per)) if len(rows) else None,
            "joint": float(mat.all(axis=1).mean()) if len(rows) else None,
            "no_interval": int(no_ci),
        }
    return summary


def _param_names(scenario: SimScenario) -> tuple[str, ...]:
    names = ("theta0", "theta1", "theta2")
    return names[1:] if scenario.plac_adj else names


def run_study(
    scenarios: Iterable[SimScenario],
    cfg: StudyConfig | None = None,
) -> dict:
    """Simulate every scenario and aggregate RMSE and interval coverage.

    Replicates that fail in the first stage or the fit are tallied and
    excluded; replicates whose Wald covariance is unavailable (a parameter
    on its bound) count as not covered.  With ``workers > 1`` replicate
    chunks run in separate processes; the report is identical to a serial
    run.
    """
    cfg = cfg or StudyConfig()
    scenarios = list(scenarios)
    if not scenarios:
        raise ValidationError("no scenarios to simulate")
    report = {"schema": "dosekit/v1", "kind": "simulation-report", "methods": list(cfg.methods),
              "level": cfg.level, "results": []}
    for sc in scenarios:
        reps = list(range(sc.replicates))
        if cfg.workers == 1:
            outcomes = _run_chunk((sc, reps, cfg))
        else:
            chunks = [reps[i::cfg.workers] for i in range(cfg.workers)]
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                parts = list(pool.map(_run_chunk, [(sc, c, cfg) for c in chunks]))
            outcomes = [None] * len(reps)
            for c, part in zip(chunks, parts):
                for r, o in zip(c, part):
                    outcomes[r] = o
        report["results"].append(_summarize(sc, outcomes, cfg))
    return report


def max_effect_dose(scenario: SimScenario) -> int:
    """Index of the design dose with the largest absolute effect over placebo.

    A flat truth has no such dose; the highest dose is used.
    """
    f = scenario.mean_curve()
    effect = np.abs(f - f[0])
    return len(f) - 1 if effect.max() == 0 else int(np.argmax(effect))


def power_check(scenario: SimScenario, alpha: float = 0.05) -> float:
    """Simulated power of a one-sided Wald test, max-effect dose versus placebo.

    The test uses the first-stage estimates and is one-sided in the
    direction of the true effect.
    """
    j = max_effect_dose(scenario)
    sign = np.sign(scenario.mean_curve()[j] - scenario.mean_curve()[0]) or 1.0
    crit = special.ndtri(1 - alpha)
    hits = 0
    valid = 0
    for r in range(scenario.replicates):
        try:
            est = first_stage(scenario, generate(scenario, r))
        except DoseKitError:
            continue
        valid += 1
        if est.plac_adj:
            diff, var = est.mu[j - 1], est.S[j - 1, j - 1]
        else:
            diff = est.mu[j] - est.mu[0]
            var = est.S[j, j] + est.S[0, 0] - 2 * est.S[0, j]
        hits += bool(sign * diff / np.sqrt(var) > crit)
    return hits / scenario.replicates


def desk_scenarios(names: Sequence[str], sample_sizes: Sequence[int] = DESK_SAMPLE_SIZES,
                   replicates: int = 500, seed: int = 0) -> list[SimScenario]:
    return [preset(nm, n_per_arm=n, replicates=replicates, seed=seed) for nm in names for n in sample_sizes]


def with_n(scenario: SimScenario, n: int) -> SimScenario:
    return replace(scenario, n_per_arm=n)
