"""Two-stage GLS dose-response fitting (the Mod step).

Given first-stage estimates ``mu_hat`` with covariance ``S`` the fit
minimizes::

    Psi(theta) = (mu_hat - f(x, theta))' S^{-1} (mu_hat - f(x, theta))

Each family is linear in ``(e0, scale)`` once the nonlinear parameters are
fixed, so those two are profiled out with a closed-form GLS solve.  The
profile is scanned on a log-spaced grid and refined locally (golden section
in one dimension, Nelder-Mead in two).  Linear and quadratic models are
solved directly.  Placebo-adjusted estimates are fitted without intercept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, optimize, special

from dosekit.errors import (
    BoundaryWarning,
    ConvergenceError,
    SingularCovarianceError,
    ValidationError,
)
from dosekit.mctest import AnovaEstimate
from dosekit.models import (
    Family,
    default_bounds,
    eval_full,
    eval_standardized,
    gradient_full,
    quadratic_from_beta,
)

GRID_POINTS = 50
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
# refinement stops once the bracket is this narrow on the log scale
_LOG_XTOL = 1e-9
_BOUND_TOL = 1e-6
_STARTS_2D = 3


@dataclass(frozen=True)
class FitBounds:
    """Closed box for the nonlinear parameters, one ``(lo, hi)`` per parameter."""

    limits: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        lim = tuple((float(lo), float(hi)) for lo, hi in self.limits)
        for lo, hi in lim:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValidationError("bounds must be finite")
            if not 0 < lo < hi:
                raise ValidationError(f"bounds need 0 < lower < upper, got ({lo:g}, {hi:g})")
        object.__setattr__(self, "limits", lim)

    @classmethod
    def default(cls, family: Family | str, max_dose: float) -> "FitBounds":
        return cls(default_bounds(family, max_dose))

    @classmethod
    def resolve(
        cls, bounds: "FitBounds | Sequence[Sequence[float]] | None", family: Family, max_dose: float
    ) -> "FitBounds":
        if bounds is None:
            out = cls.default(family, max_dose)
        elif isinstance(bounds, FitBounds):
            out = bounds
        else:
            pairs = np.asarray(bounds, dtype=float).reshape(-1, 2)
            out = cls(tuple(map(tuple, pairs)))
            if family is Family.SIGEMAX and len(out.limits) == 1:
                out = cls(out.limits + (default_bounds(family, max_dose)[1],))
        want = 0 if family is Family.QUADRATIC else family.n_nonlinear
        if len(out.limits) != want:
            raise ValidationError(f"{family.value} takes {want} bound pair(s), got {len(out.limits)}")
        return out

    @property
    def lower(self) -> NDArray[np.float64]:
        return np.array([lo for lo, _ in self.limits])

    @property
    def upper(self) -> NDArray[np.float64]:
        return np.array([hi for _, hi in self.limits])


class Predictor(Protocol):
    label: str

    def predict(self, x: ArrayLike) -> NDArray[np.float64]: ...


@dataclass(frozen=True)
class FittedModel:
    """Result of :func:`gls_fit`.

    ``theta`` always has the full layout ``(e0, scale, *theta0)``.  In
    placebo-adjusted fits ``e0`` is fixed at 0, is not counted in the
    dimension, and has a zero row and column in ``theta_cov``.
    ``theta_cov`` is ``None`` when a nonlinear parameter lies on a bound.
    """

    family: Family
    theta: NDArray[np.float64]
    criterion: float
    theta_cov: NDArray[np.float64] | None
    gaic: float
    plac_adj: bool
    at_bound: NDArray[np.bool_]
    est: AnovaEstimate = field(repr=False)
    label: str = ""
    tau: float = 2.0

    @property
    def n_free(self) -> int:
        return self.family.n_params - (1 if self.plac_adj else 0)

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.family.param_names

    def params(self) -> dict[str, float]:
        return dict(zip(self.param_names, map(float, self.theta)))

    def predict(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(eval_full(self.family, self.theta, x), dtype=float)

    def residuals(self) -> NDArray[np.float64]:
        return self.est.mu - self.predict(self.est.doses)


# ---------------------------------------------------------------------------
# Profiled least squares
# ---------------------------------------------------------------------------

class _Whitened:
    """Data whitened by the Cholesky factor of ``S``: ``y = L^{-1} mu``."""

    def __init__(self, Y: NDArray, S: NDArray, x: NDArray, plac_adj: bool):
        try:
            self.L = linalg.cholesky(S, lower=True)
        except linalg.LinAlgError:
            raise SingularCovarianceError("covariance is not positive definite") from None
        self.x = x
        self.plac_adj = plac_adj
        self.y = linalg.solve_triangular(self.L, Y.T, lower=True).T  # (B, K)
        self.a = linalg.solve_triangular(self.L, np.ones(x.size), lower=True)
        self.yy = np.einsum("bk,bk->b", self.y, self.y)
        self.ay = self.y @ self.a
        self.aa = float(self.a @ self.a)

    def whiten(self, F: NDArray) -> NDArray:
        """``L^{-1}`` applied along the last axis of ``F``."""
        flat = F.reshape(-1, F.shape[-1])
        return linalg.solve_triangular(self.L, flat.T, lower=True).T.reshape(F.shape)

    def profile(self, F0: NDArray, rows: NDArray | None = None) -> tuple[NDArray, NDArray, NDArray]:
        """Profiled criterion for standardized columns ``F0``.

        ``F0`` has shape ``(B, G, K)``: for every data row ``b`` a set of
        ``G`` candidate shapes.  Returns ``(psi, e0, scale)`` of shape
        ``(B, G)``.  ``rows`` selects a subset of data rows.
        """
        y = self.y if rows is None else self.y[rows]
        yy = self.yy if rows is None else self.yy[rows]
        ay = self.ay if rows is None else self.ay[rows]
        W = self.whiten(F0)
        bb = np.einsum("bgk,bgk->bg", W, W)
        by = np.einsum("bgk,bk->bg", W, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.plac_adj:
                scale = by / bb
                e0 = np.zeros_like(scale)
                psi = yy[:, None] - scale * by
                bad = bb <= 1e-14 * np.maximum(yy[:, None], 1.0)
            else:
                ab = W @ self.a
                det = self.aa * bb - ab**2
                e0 = (bb * ay[:, None] - ab * by) / det
                scale = (self.aa * by - ab * ay[:, None]) / det
                psi = yy[:, None] - e0 * ay[:, None] - scale * by
                bad = det <= 1e-12 * self.aa * bb
        psi = np.where(bad | ~np.isfinite(psi), np.inf, np.maximum(psi, 0.0))
        return psi, e0, scale

    def linear_solve(self, X: NDArray) -> tuple[NDArray, NDArray]:
        """GLS coefficients and criterion for a fixed design matrix ``X`` (K x p)."""
        Xw = linalg.solve_triangular(self.L, X, lower=True)
        coef, *_ = np.linalg.lstsq(Xw, self.y.T, rcond=None)
        coef = coef.T
        resid = self.y - coef @ Xw.T
        return coef, np.einsum("bk,bk->b", resid, resid)


def _golden(objective, lo: NDArray, hi: NDArray) -> NDArray:
    """Vectorized golden-section minimization on per-row intervals."""
    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while np.max(b - a) > _LOG_XTOL:
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        fnew = objective(new)
        c, d, fc, fd = (
            np.where(left, new, d),
            np.where(left, c, new),
            np.where(left, fnew, fd),
            np.where(left, fc, fnew),
        )
    mid = (a + b) / 2.0
    fm = objective(mid)
    # keep an endpoint if it beats the interior (minimum on a bound)
    fa, fb = objective(lo), objective(hi)
    best = np.where(fa < fm, lo, mid)
    fbest = np.minimum(fa, fm)
    return np.where(fb < fbest, hi, best)


def _fit_1d(w: _Whitened, family: Family, bounds: FitBounds) -> NDArray:
    """Best log nonlinear parameter for every data row (one nonlinear dimension)."""
    lo, hi = np.log(bounds.lower[0]), np.log(bounds.upper[0])
    grid = np.linspace(lo, hi, GRID_POINTS)
    F0 = eval_standardized(family, np.exp(grid)[:, None], w.x)  # (G, K)
    n = w.y.shape[0]
    psi, _, _ = w.profile(np.broadcast_to(F0, (n,) + F0.shape))
    if not np.all(np.isfinite(psi.min(axis=1))):
        raise ConvergenceError(f"{family.value} profile is undefined on the whole grid")
    i = np.argmin(psi, axis=1)
    a = grid[np.maximum(i - 1, 0)]
    b = grid[np.minimum(i + 1, GRID_POINTS - 1)]
    rows = np.arange(n)

    def objective(t: NDArray) -> NDArray:
        F = eval_standardized(family, np.exp(t)[:, None], w.x)  # (B, K)
        return w.profile(F[:, None, :])[0][:, 0]

    return _golden(objective, a, b) if n else np.empty(0) + rows


def _fit_2d(w: _Whitened, family: Family, bounds: FitBounds) -> NDArray:
    """Best log nonlinear parameters (sigmoid Emax) for every data row."""
    lo, hi = np.log(bounds.lower), np.log(bounds.upper)
    g1 = np.linspace(lo[0], hi[0], GRID_POINTS)
    g2 = np.linspace(lo[1], hi[1], GRID_POINTS)
    mesh = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    F0 = eval_standardized(family, np.exp(mesh), w.x)
    n = w.y.shape[0]
    psi, _, _ = w.profile(np.broadcast_to(F0, (n,) + F0.shape))
    out = np.empty((n, 2))
    step = np.array([g1[2] - g1[0], g2[2] - g2[0]])
    for r in range(n):

        def objective(t: NDArray, r: int = r) -> float:
            t = np.clip(t, lo, hi)
            F = eval_standardized(family, np.exp(t), w.x)
            return float(w.profile(F[None, None, :], rows=np.array([r]))[0][0, 0])

        best, fbest = None, np.inf
        for start in mesh[np.argsort(psi[r], kind="stable")[:_STARTS_2D]]:
            # a simplex pointing into the box, so a start on a bound cannot collapse onto it
            inward = np.where(start + step <= hi, step, -step)
            simplex = np.array([start, start + [inward[0], 0.0], start + [0.0, inward[1]]])
            res = optimize.minimize(
                objective,
                start,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options={"initial_simplex": simplex, "xatol": _LOG_XTOL * 10, "fatol": 1e-14, "maxiter": 400},
            )
            cand = np.clip(res.x, lo, hi)
            fc = objective(cand)
            if fc < fbest:
                best, fbest = cand, fc
        out[r] = best
    return out


def _batch_fit(
    Y: NDArray, S: NDArray, x: NDArray, family: Family, bounds: FitBounds, plac_adj: bool
) -> tuple[NDArray, NDArray]:
    """Fit every row of ``Y``; returns ``(theta (B, p), criterion (B,))``."""
    w = _Whitened(Y, S, x, plac_adj)
    if family is Family.LINEAR or family is Family.QUADRATIC:
        cols = [x, x**2] if family is Family.QUADRATIC else [x]
        if not plac_adj:
            cols.insert(0, np.ones_like(x))
        coef, psi = w.linear_solve(np.column_stack(cols))
        if plac_adj:
            coef = np.column_stack([np.zeros(coef.shape[0]), coef])
        if family is Family.QUADRATIC:
            with np.errstate(divide="ignore", invalid="ignore"):
                delta = coef[:, 2] / coef[:, 1]
            coef = np.column_stack([coef[:, :2], delta])
            psi = np.where(np.isfinite(delta), psi, np.inf)
        return coef, np.maximum(psi, 0.0)

    logt = _fit_1d(w, family, bounds)[:, None] if family.n_nonlinear == 1 else _fit_2d(w, family, bounds)
    theta0 = np.exp(logt)
    F = eval_standardized(family, theta0, x)
    psi, e0, scale = w.profile(F[:, None, :])
    return np.column_stack([e0[:, 0], scale[:, 0], theta0]), psi[:, 0]


def _at_bound(family: Family, theta: NDArray, bounds: FitBounds) -> NDArray[np.bool_]:
    if family.n_nonlinear == 0 or family is Family.QUADRATIC:
        return np.zeros(family.n_nonlinear, dtype=bool)
    t = np.log(theta[2:])
    return (np.abs(t - np.log(bounds.lower)) <= _BOUND_TOL) | (np.abs(t - np.log(bounds.upper)) <= _BOUND_TOL)


def _information_inverse(family: Family, theta: NDArray, est: AnovaEstimate) -> NDArray:
    F = gradient_full(family, theta, est.doses)
    if est.plac_adj:
        F = F[:, 1:]
    factor = linalg.cho_factor(est.S, lower=True)
    info = F.T @ linalg.cho_solve(factor, F)
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError:
        raise SingularCovarianceError("information matrix is singular") from None
    if not np.all(np.isfinite(cov)) or np.linalg.eigvalsh((cov + cov.T) / 2).min() <= 0:
        raise SingularCovarianceError("information matrix is singular")
    cov = (cov + cov.T) / 2.0
    if est.plac_adj:
        full = np.zeros((family.n_params, family.n_params))
        full[1:, 1:] = cov
        cov = full
    return cov


def gls_fit(
    est: AnovaEstimate,
    family: Family | str,
    bounds: FitBounds | Sequence[Sequence[float]] | None = None,
    label: str | None = None,
    tau: float = 2.0,
) -> FittedModel:
    """Fit a dose-response model to first-stage estimates by GLS.

    Parameters
    ----------
    est : AnovaEstimate
        First-stage estimates.  Placebo-adjusted estimates are fitted by
        ``scale * f0(x)`` without intercept.
    family : Family or str
    bounds : FitBounds, optional
        Box for the nonlinear parameters; defaults scale with the largest
        dose.  Ignored for linear and quadratic models (closed form).
    label : str, optional
    tau : float
        Penalty per parameter in the information criterion.

    Returns
    -------
    FittedModel
    """
    family = Family.parse(family)
    p = family.n_params - (1 if est.plac_adj else 0)
    if est.design.k < p:
        raise ValidationError(f"{family.value} needs at least {p} doses, the design has {est.design.k}")
    fb = FitBounds.resolve(bounds, family, est.design.max_dose)
    thetas, psis = _batch_fit(est.mu[None, :], est.S, est.doses, family, fb, est.plac_adj)
    theta, psi = thetas[0], float(psis[0])
    if not np.isfinite(psi) or not np.all(np.isfinite(theta)):
        raise ConvergenceError(f"{family.value} fit did not produce finite estimates")
    at_bound = _at_bound(family, theta, fb)
    cov = None
    if not at_bound.any():
        try:
            cov = _information_inverse(family, theta, est)
        except SingularCovarianceError:
            cov = None
    theta.setflags(write=False)
    return FittedModel(
        family=family,
        theta=theta,
        criterion=psi,
        theta_cov=cov,
        gaic=psi + tau * p,
        plac_adj=est.plac_adj,
        at_bound=at_bound,
        est=est,
        label=label or family.value,
        tau=tau,
    )


def criterion(fit: FittedModel) -> float:
    """Recompute the GLS criterion from the fitted parameters."""
    r = fit.residuals()
    return float(r @ linalg.solve(fit.est.S, r, assume_a="pos"))


def theta_covariance(fit: FittedModel, est: AnovaEstimate | None = None) -> NDArray[np.float64]:
    """Asymptotic covariance ``(F' S^{-1} F)^{-1}`` of the GLS estimate.

    Issues a :class:`BoundaryWarning` when a parameter sits on its bound,
    where the approximation is unreliable.

    Raises
    ------
    SingularCovarianceError
        If the information matrix is singular.
    """
    est = est or fit.est
    if fit.at_bound.any():
        names = [n for n, b in zip(fit.param_names[2:], fit.at_bound) if b]
        warnings.warn(
            f"{fit.label}: {', '.join(names)} on its bound; Wald covariance unreliable",
            BoundaryWarning,
            stacklevel=2,
        )
    return _information_inverse(fit.family, fit.theta, est)


def gaic(fit: FittedModel, tau: float | None = None) -> float:
    """Generalized information criterion ``Psi + tau * dim(theta)``."""
    tau = fit.tau if tau is None else tau
    return fit.criterion + tau * fit.n_free


SelectionRule = Literal["min-gaic", "max-z"]


def select_model(
    fits: Sequence[FittedModel],
    rule: SelectionRule = "min-gaic",
    z: Sequence[float] | None = None,
) -> str:
    """Label of the preferred fit; ties go to the first listed.

    With ``rule="max-z"`` the statistics ``z`` (aligned with ``fits``)
    decide instead of the information criterion.
    """
    if not fits:
        raise ValidationError("no fits to select from")
    if rule == "min-gaic":
        score = np.array([f.gaic for f in fits])
        return fits[int(np.argmin(score))].label
    if rule == "max-z":
        if z is None or len(z) != len(fits):
            raise ValidationError("max-z selection needs one statistic per fit")
        return fits[int(np.argmax(np.asarray(z, dtype=float)))].label
    raise ValidationError(f"unknown selection rule {rule!r}")


def model_average(fits: Sequence[FittedModel]) -> NDArray[np.float64]:
    """Information-criterion weights ``exp(-gAIC/2)``, normalized."""
    if not fits:
        raise ValidationError("no fits to average")
    g = np.array([f.gaic for f in fits])
    w = np.exp(-(g - g.min()) / 2.0)
    return w / w.sum()


@dataclass(frozen=True)
class AveragedModel:
    """Weighted combination of fitted curves."""

    fits: tuple[FittedModel, ...]
    weights: NDArray[np.float64]
    label: str = "average"

    @classmethod
    def from_fits(cls, fits: Sequence[FittedModel]) -> "AveragedModel":
        return cls(tuple(fits), model_average(fits))

    def predict(self, x: ArrayLike) -> NDArray[np.float64]:
        return sum(w * f.predict(x) for w, f in zip(self.weights, self.fits))


# ---------------------------------------------------------------------------
# Target dose
# ---------------------------------------------------------------------------

Direction = Literal["increase", "decrease"]


@dataclass(frozen=True)
class TargetDoseEstimate:
    dose: float | None
    delta: float
    direction: Direction
    source: str


def _parse_direction(direction: str) -> Direction:
    d = str(direction).lower()
    if d in ("increase", "inc", "increasing"):
        return "increase"
    if d in ("decrease", "dec", "decreasing"):
        return "decrease"
    raise ValidationError(f"direction must be 'increase' or 'decrease', got {direction!r}")


def target_dose(
    model: FittedModel | Predictor,
    delta: float,
    direction: str = "increase",
    max_dose: float | None = None,
    grid_points: int = 2001,
) -> TargetDoseEstimate:
    """Smallest dose in ``(0, max_dose]`` whose effect over placebo reaches ``delta``.

    Emax and linear fits are inverted in closed form; any other predictor
    is scanned on a grid and the first crossing is refined by Brent's
    method.  ``dose`` is ``None`` when the target is not reached.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    direction = _parse_direction(direction)
    sign = 1.0 if direction == "increase" else -1.0
    if max_dose is None:
        if not isinstance(model, (FittedModel, AveragedModel)):
            raise ValidationError("max_dose is required for a generic predictor")
        fit0 = model if isinstance(model, FittedModel) else model.fits[0]
        max_dose = fit0.est.design.max_dose
    label = getattr(model, "label", "model")

    if isinstance(model, FittedModel) and model.family in (Family.EMAX, Family.LINEAR):
        slope = sign * model.theta[1]
        if model.family is Family.LINEAR:
            x = delta / slope if slope > 0 else np.inf
        else:
            ed50 = model.theta[2]
            x = delta * ed50 / (slope - delta) if slope > delta else np.inf
        dose = float(x) if 0 < x <= max_dose * (1 + 1e-12) else None
        return TargetDoseEstimate(dose, float(delta), direction, label)

    base = float(np.asarray(model.predict(0.0)))

    def gap(x: float | NDArray) -> NDArray:
        return sign * (np.asarray(model.predict(x)) - base) - delta

    grid = np.linspace(0.0, max_dose, grid_points)
    g = gap(grid)
    hit = np.flatnonzero(g[1:] >= 0)
    if hit.size == 0:
        return TargetDoseEstimate(None, float(delta), direction, label)
    j = hit[0] + 1
    if g[j] == 0 or g[j - 1] >= 0:
        dose = float(grid[j])
    else:
        dose = float(optimize.brentq(lambda t: float(gap(t)), grid[j - 1], grid[j], xtol=1e-12, rtol=1e-14))
    return TargetDoseEstimate(dose, float(delta), direction, label)


# ---------------------------------------------------------------------------
# Intervals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionBand:
    doses: NDArray[np.float64]
    fit: NDArray[np.float64]
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]
    level: float


def predict_with_ci(fit: FittedModel, doses: ArrayLike, level: float = 0.9) -> PredictionBand:
    """Fitted curve with delta-method pointwise intervals."""
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    x = np.asarray(doses, dtype=float).ravel()
    cov = fit.theta_cov
    if cov is None:
        cov = theta_covariance(fit)
    G = gradient_full(fit.family, fit.theta, x)
    se = np.sqrt(np.maximum(np.einsum("ip,pq,iq->i", G, cov, G), 0.0))
    y = fit.predict(x)
    zq = special.ndtri(0.5 + level / 2.0)
    return PredictionBand(x, y, y - zq * se, y + zq * se, level)


def wald_intervals(fit: FittedModel, level: float = 0.9) -> NDArray[np.float64] | None:
    """Per-parameter Wald intervals, shape ``(p, 2)``; ``None`` without a covariance."""
    if fit.theta_cov is None:
        return None
    zq = special.ndtri(0.5 + level / 2.0)
    se = np.sqrt(np.diag(fit.theta_cov))
    return np.column_stack([fit.theta - zq * se, fit.theta + zq * se])


@dataclass(frozen=True)
class BootstrapResult:
    """Parametric bootstrap of a GLS fit.

    ``thetas`` holds the successful refits (rows), ``curves`` their
    predictions on ``doses``.
    """

    thetas: NDArray[np.float64]
    curves: NDArray[np.float64]
    doses: NDArray[np.float64]
    quantiles: tuple[float, float]
    n_draws: int
    n_failed: int

    @property
    def theta_intervals(self) -> NDArray[np.float64]:
        return np.quantile(self.thetas, self.quantiles, axis=0).T

    @property
    def curve_intervals(self) -> NDArray[np.float64]:
        return np.quantile(self.curves, self.quantiles, axis=0).T

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_draws


MAX_FAILED_FRACTION = 0.05


def bootstrap(
    est: AnovaEstimate,
    family: Family | str,
    bounds: FitBounds | Sequence[Sequence[float]] | None = None,
    B: int = 500,
    seed: int = 0,
    quantiles: tuple[float, float] = (0.05, 0.95),
    doses: ArrayLike | None = None,
) -> BootstrapResult:
    """Parametric bootstrap: refit ``B`` draws ``mu* ~ N(mu_hat, S)``.

    All draws come from one generator seeded by ``seed`` and are fitted as
    a batch, so the result is reproducible and independent of scheduling.
    Draws whose refit fails are dropped and counted.

    Raises
    ------
    ConvergenceError
        If more than 5% of the refits fail.
    """
    if B < 100:
        raise ValidationError("the bootstrap needs B >= 100 draws")
    lo, hi = quantiles
    if not 0 <= lo < hi <= 1:
        raise ValidationError("quantiles must satisfy 0 <= lo < hi <= 1")
    family = Family.parse(family)
    fb = FitBounds.resolve(bounds, family, est.design.max_dose)
    x = est.doses
    grid = x if doses is None else np.asarray(doses, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(est.S)
    draws = est.mu + rng.standard_normal((B, x.size)) @ L.T
    thetas, psi = _batch_fit(draws, est.S, x, family, fb, est.plac_adj)
    ok = np.isfinite(psi) & np.all(np.isfinite(thetas), axis=1)
    n_failed = int(B - ok.sum())
    if n_failed > MAX_FAILED_FRACTION * B:
        raise ConvergenceError(f"{n_failed} of {B} bootstrap refits failed")
    thetas = thetas[ok]
    curves = np.asarray(eval_full(family, thetas, grid))
    return BootstrapResult(thetas, curves, grid, (lo, hi), B, n_failed)


def quadratic_beta(theta: ArrayLike) -> NDArray[np.float64]:
    """Polynomial coefficients ``(e0, b1, b2)`` for rows of quadratic parameters."""
    t = np.asarray(theta, dtype=float)
    return np.stack([t[..., 0], t[..., 1], t[..., 1] * t[..., 2]], axis=-1)


__all__ = [
    "AveragedModel",
    "BootstrapResult",
    "FitBounds",
    "FittedModel",
    "PredictionBand",
    "TargetDoseEstimate",
    "bootstrap",
    "criterion",
    "gaic",
    "gls_fit",
    "model_average",
    "predict_with_ci",
    "quadratic_beta",
    "quadratic_from_beta",
    "select_model",
    "target_dose",
    "theta_covariance",
    "wald_intervals",
]
