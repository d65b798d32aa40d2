"""First-stage estimators: dose as a factor, one parameter per dose.

Each estimator turns subject-level data into ``(mu_hat, S)`` packed in an
:class:`~dosekit.mctest.AnovaEstimate`:

* normal outcomes: group means with a pooled variance,
* binary outcomes: saturated logistic model (closed form on the logit scale),
* counts: negative binomial with log link and a common dispersion ``k``
  (variance ``mu + mu^2 / k``),
* event times: Cox model with Breslow ties, log hazard ratios versus placebo.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, special

from dosekit.errors import (
    ConvergenceError,
    MonotoneLikelihoodError,
    SingularCovarianceError,
    ValidationError,
)
from dosekit.mctest import AnovaEstimate
from dosekit.models import DoseDesign

Endpoint = Literal["normal", "binary", "count", "tte"]
ENDPOINTS: tuple[str, ...] = ("normal", "binary", "count", "tte")


@dataclass(frozen=True)
class SubjectData:
    """Subject-level (or, for binary outcomes, per-dose aggregated) data.

    ``values`` holds the endpoint-specific columns:

    =========  ===========================
    endpoint   columns
    =========  ===========================
    normal     ``resp``
    count      ``resp``
    binary     ``successes``, ``trials``
    tte        ``time``, ``event``
    =========  ===========================
    """

    endpoint: Endpoint
    dose: NDArray[np.float64]
    values: dict[str, NDArray[np.float64]]

    def __post_init__(self) -> None:
        if self.endpoint not in ENDPOINTS:
            raise ValidationError(f"unknown endpoint {self.endpoint!r}")
        dose = np.asarray(self.dose, dtype=float).ravel()
        vals = {k: np.asarray(v, dtype=float).ravel() for k, v in self.values.items()}
        need = {"normal": ("resp",), "count": ("resp",), "binary": ("successes", "trials"),
                "tte": ("time", "event")}[self.endpoint]
        for col in need:
            if col not in vals:
                raise ValidationError(f"{self.endpoint} data need a {col!r} column")
            if vals[col].shape != dose.shape:
                raise ValidationError(f"column {col!r} has {vals[col].size} rows, dose has {dose.size}")
            if not np.all(np.isfinite(vals[col])):
                raise ValidationError(f"column {col!r} contains non-finite values")
        if not np.all(np.isfinite(dose)) or np.any(dose < 0):
            raise ValidationError("doses must be finite and nonnegative")
        object.__setattr__(self, "dose", dose)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, col: str) -> NDArray[np.float64]:
        return self.values[col]


def _groups(dose: NDArray) -> tuple[NDArray, NDArray]:
    levels, idx = np.unique(dose, return_inverse=True)
    return levels, idx


def anova_normal(dose: ArrayLike, resp: ArrayLike) -> AnovaEstimate:
    """Group means with covariance ``diag(s2_pooled / n_i)``.

    Examples
    --------
    >>> est = anova_normal([0, 0, 1, 1], [0.0, 2.0, 4.0, 6.0])
    >>> est.mu.tolist(), np.diag(est.S).tolist()
    ([1.0, 5.0], [1.0, 1.0])
    """
    dose = np.asarray(dose, dtype=float).ravel()
    y = np.asarray(resp, dtype=float).ravel()
    if dose.shape != y.shape:
        raise ValidationError("dose and response lengths differ")
    levels, idx = _groups(dose)
    n = np.bincount(idx, minlength=levels.size).astype(float)
    if np.any(n < 2):
        raise ValidationError(f"dose {levels[np.argmin(n)]:g} has fewer than 2 observations")
    mu = np.bincount(idx, weights=y) / n
    rss = float(np.sum((y - mu[idx]) ** 2))
    s2 = rss / (y.size - levels.size)
    return AnovaEstimate(DoseDesign(levels), mu, np.diag(s2 / n))


def logistic_saturated(
    dose: ArrayLike, successes: ArrayLike, trials: ArrayLike, haldane: bool = False
) -> AnovaEstimate:
    """Saturated logistic model: ``logit(p_i)`` with variance ``1 / (n_i p_i (1 - p_i))``.

    Rows sharing a dose are pooled.  With ``haldane`` every arm gets 0.5
    added to both its success and failure counts, which permits arms with
    0% or 100% response.
    """
    dose = np.asarray(dose, dtype=float).ravel()
    s = np.asarray(successes, dtype=float).ravel()
    n = np.asarray(trials, dtype=float).ravel()
    if not (dose.shape == s.shape == n.shape):
        raise ValidationError("dose, successes and trials lengths differ")
    if np.any(s < 0) or np.any(n < s) or np.any(n <= 0):
        raise ValidationError("counts must satisfy 0 <= successes <= trials, trials > 0")
    levels, idx = _groups(dose)
    s = np.bincount(idx, weights=s)
    n = np.bincount(idx, weights=n)
    if haldane:
        s, n = s + 0.5, n + 1.0
    elif np.any((s == 0) | (s == n)):
        bad = levels[(s == 0) | (s == n)]
        raise ValidationError(
            f"observed proportion 0 or 1 at dose(s) {', '.join(f'{d:g}' for d in bad)}; "
            "use the Haldane correction"
        )
    p = s / n
    mu = np.log(s) - np.log(n - s)
    return AnovaEstimate(DoseDesign(levels), mu, np.diag(1.0 / (n * p * (1.0 - p))))


# ---------------------------------------------------------------------------
# Negative binomial
# ---------------------------------------------------------------------------

K_MAX = 1e8


@dataclass(frozen=True)
class NegBinFit:
    """Saturated negative binomial fit; ``k = inf`` marks the Poisson limit."""

    estimate: AnovaEstimate
    k: float
    loglik: float
    iterations: int


def _nb_loglik(y: NDArray, mu: NDArray, k: float) -> float:
    return float(np.sum(
        special.gammaln(y + k) - special.gammaln(k) - special.gammaln(y + 1)
        + k * (np.log(k) - np.log(k + mu)) + y * (np.log(mu) - np.log(k + mu))
    ))


def _nb_score_logk(y: NDArray, mu: NDArray, k: float) -> tuple[float, float]:
    """First and second derivatives of the log-likelihood in ``log k``."""
    s = np.sum(special.digamma(y + k) - special.digamma(k) + np.log(k) - np.log(k + mu)
               + 1.0 - (y + k) / (k + mu))
    ds = np.sum(special.polygamma(1, y + k) - special.polygamma(1, k) + 1.0 / k - 1.0 / (k + mu)
                - (mu - y) / (k + mu) ** 2)
    return float(k * s), float(k * s + k * k * ds)


def negbin_mle(dose: ArrayLike, resp: ArrayLike, max_iter: int = 100) -> NegBinFit:
    """Maximum likelihood for per-dose log means and a common dispersion.

    The log-mean score vanishes at ``log(ybar_i)`` whatever ``k`` is, so
    the joint maximization reduces to Newton steps in ``log k`` (with
    step halving).  The information is block diagonal at the optimum,
    giving ``var(log mu_i) = 1 / (n_i ybar_i) + 1 / (n_i k)``.
    """
    dose = np.asarray(dose, dtype=float).ravel()
    y = np.asarray(resp, dtype=float).ravel()
    if dose.shape != y.shape:
        raise ValidationError("dose and response lengths differ")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValidationError("counts must be nonnegative integers")
    levels, idx = _groups(dose)
    n = np.bincount(idx, minlength=levels.size).astype(float)
    if np.any(n < 2):
        raise ValidationError(f"dose {levels[np.argmin(n)]:g} has fewer than 2 observations")
    ybar = np.bincount(idx, weights=y) / n
    if np.any(ybar == 0):
        raise ValidationError(
            f"all counts are zero at dose(s) {', '.join(f'{d:g}' for d in levels[ybar == 0])}"
        )
    mu = ybar[idx]

    # moment start
    resid_var = np.sum((y - mu) ** 2) / max(y.size - levels.size, 1)
    excess = resid_var - np.mean(y)
    u = np.log(np.clip(np.mean(y) ** 2 / excess, 1e-3, K_MAX)) if excess > 0 else np.log(K_MAX)
    u_max = np.log(K_MAX)
    it = 0
    ll = _nb_loglik(y, mu, np.exp(u))
    for it in range(1, max_iter + 1):
        g, h = _nb_score_logk(y, mu, np.exp(u))
        if u >= u_max and g >= 0:
            break
        if abs(g) <= 1e-9 * max(1.0, abs(ll)):
            break
        step = -g / h if h < 0 else np.sign(g)
        step = float(np.clip(step, -5.0, 5.0))
        for _ in range(60):
            u_new = min(u + step, u_max)
            ll_new = _nb_loglik(y, mu, np.exp(u_new))
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            step /= 2.0
        else:
            raise ConvergenceError("negative binomial dispersion update failed")
        converged = abs(u_new - u) <= 1e-12
        u, ll = u_new, ll_new
        if converged:
            break
    else:
        raise ConvergenceError(f"negative binomial fit did not converge in {max_iter} iterations")
    k = np.inf if u >= u_max else float(np.exp(u))
    var = 1.0 / (n * ybar) + (0.0 if np.isinf(k) else 1.0 / (n * k))
    est = AnovaEstimate(DoseDesign(levels), np.log(ybar), np.diag(var))
    return NegBinFit(est, k, ll, it)


def negbin_saturated(dose: ArrayLike, resp: ArrayLike) -> AnovaEstimate:
    """Per-dose log means from a negative binomial model (see :func:`negbin_mle`)."""
    return negbin_mle(dose, resp).estimate


# ---------------------------------------------------------------------------
# Cox proportional hazards
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoxFit:
    estimate: AnovaEstimate
    loglik: float
    gradient_norm: float
    iterations: int


def _cox_tables(idx: NDArray, time: NDArray, event: NDArray, g: int) -> tuple[NDArray, NDArray]:
    """Events ``d[t, j]`` and risk-set sizes ``r[t, j]`` at each distinct event time."""
    etimes = np.unique(time[event])
    d = np.zeros((etimes.size, g))
    pos = np.searchsorted(etimes, time[event])
    np.add.at(d, (pos, idx[event]), 1.0)
    r = np.empty((etimes.size, g))
    for j in range(g):
        tj = np.sort(time[idx == j])
        r[:, j] = tj.size - np.searchsorted(tj, etimes, side="left")
    return d, r


def _cox_eval(beta: NDArray, d: NDArray, r: NDArray) -> tuple[float, NDArray, NDArray]:
    """Breslow partial log-likelihood, gradient and Hessian (placebo is column 0)."""
    eta = np.concatenate([[0.0], beta])
    w = r * np.exp(eta)  # (T, G)
    s0 = w.sum(axis=1)
    dt = d.sum(axis=1)
    ll = float(np.sum(d @ eta) - np.sum(dt * np.log(s0)))
    p = (w / s0[:, None])[:, 1:]
    grad = d[:, 1:].sum(axis=0) - dt @ p
    hess = -(np.diag(dt @ p) - (p * dt[:, None]).T @ p)
    return ll, grad, hess


def cox_mle(
    dose: ArrayLike, time: ArrayLike, event: ArrayLike, max_iter: int = 100, gtol: float = 1e-8
) -> CoxFit:
    """Cox model with dose as a factor; log hazard ratios versus placebo.

    Newton-Raphson with step halving (the log partial likelihood never
    decreases) until the gradient norm is at most ``gtol``.

    Raises
    ------
    MonotoneLikelihoodError
        If a dose group has no events, so its hazard ratio diverges.
    ConvergenceError
        If the iteration does not converge.
    """
    dose = np.asarray(dose, dtype=float).ravel()
    time = np.asarray(time, dtype=float).ravel()
    ev = np.asarray(event, dtype=float).ravel()
    if not (dose.shape == time.shape == ev.shape):
        raise ValidationError("dose, time and event lengths differ")
    if np.any(time <= 0):
        raise ValidationError("event times must be positive")
    if np.any((ev != 0) & (ev != 1)):
        raise ValidationError("event indicators must be 0 or 1")
    ev = ev.astype(bool)
    levels, idx = _groups(dose)
    if levels[0] != 0:
        raise ValidationError("a placebo group (dose 0) is required")
    if levels.size < 2:
        raise ValidationError("at least one active dose group is required")
    if not ev.any():
        raise ValidationError("no events observed")
    n_events = np.bincount(idx[ev], minlength=levels.size)
    if np.any(n_events == 0):
        empty = ", ".join(f"{x:g}" for x in levels[n_events == 0])
        raise MonotoneLikelihoodError(f"no events in dose group(s) {empty}; hazard ratio diverges")

    d, r = _cox_tables(idx, time, ev, levels.size)
    beta = np.zeros(levels.size - 1)
    ll, grad, hess = _cox_eval(beta, d, r)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= gtol:
            break
        try:
            step = -linalg.solve(hess, grad, assume_a="sym")
        except linalg.LinAlgError:
            raise ConvergenceError("singular information in the Cox fit") from None
        for _ in range(60):
            new = _cox_eval(beta + step, d, r)
            if new[0] >= ll:
                break
            step = step / 2.0
        else:
            raise ConvergenceError("Cox step halving failed to increase the likelihood")
        beta = beta + step
        ll, grad, hess = new
        if np.max(np.abs(beta)) > 50:
            raise MonotoneLikelihoodError("hazard ratio estimates diverge (monotone likelihood)")
    else:
        if np.linalg.norm(grad) > gtol:
            raise ConvergenceError(f"Cox fit did not converge in {max_iter} iterations")
    try:
        cov = linalg.inv(-hess)
    except linalg.LinAlgError:
        raise SingularCovarianceError("Cox information matrix is singular") from None
    est = AnovaEstimate(DoseDesign(levels[1:], plac_adj=True), beta, (cov + cov.T) / 2.0)
    return CoxFit(est, ll, float(np.linalg.norm(grad)), it)


def coxph_factor(dose: ArrayLike, time: ArrayLike, event: ArrayLike) -> AnovaEstimate:
    """Placebo-adjusted log hazard ratios (see :func:`cox_mle`)."""
    return cox_mle(dose, time, event).estimate


def estimate(data: SubjectData, haldane: bool = False) -> AnovaEstimate:
    """Dispatch to the first-stage estimator matching ``data.endpoint``."""
    if data.endpoint == "normal":
        return anova_normal(data.dose, data["resp"])
    if data.endpoint == "count":
        return negbin_saturated(data.dose, data["resp"])
    if data.endpoint == "binary":
        return logistic_saturated(data.dose, data["successes"], data["trials"], haldane=haldane)
    return coxph_factor(data.dose, data["time"], data["event"])
