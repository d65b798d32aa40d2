"""Dose-response model families.

Every family is partially linear::

    f(x, theta) = e0 + scale * f0(x, theta0)

where ``f0`` is the standardized model, fixed by the nonlinear parameters
``theta0`` alone and vanishing at placebo (``f0(0) = 0``).  Full parameter
vectors are ordered ``(e0, scale, *theta0)``.

=============  ==========================  ================
family         f0(x)                       theta0
=============  ==========================  ================
linear         x                           ()
emax           x / (x + ed50)              (ed50,)
sigemax        x^h / (x^h + ed50^h)        (ed50, h)
quadratic      x + delta * x^2             (delta,)
exponential    exp(x / delta) - 1          (delta,)
=============  ==========================  ================

Functions broadcast: ``theta0`` may carry leading batch dimensions (last
axis = parameters) and ``x`` is a scalar or 1-D dose vector, giving an
output of shape ``batch + x.shape``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from dosekit.errors import (
    DegenerateShapeError,
    InvalidParameterError,
    NoSolutionError,
    ValidationError,
)

# exp(x / delta) stays below the float64 ceiling (~exp(709.78)) when
# delta >= max_dose / 700.
EXP_DELTA_FLOOR = 1.0 / 700.0
HILL_BOUNDS = (0.25, 10.0)


class Family(str, enum.Enum):
    LINEAR = "linear"
    EMAX = "emax"
    SIGEMAX = "sigemax"
    QUADRATIC = "quadratic"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        aliases = {"sigmoidemax": "sigemax", "exp": "exponential", "quad": "quadratic"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(
                f"unknown model family {name!r}; expected one of "
                f"{', '.join(f.value for f in cls)}"
            ) from None

    @property
    def n_nonlinear(self) -> int:
        return _N_NONLINEAR[self]

    @property
    def n_params(self) -> int:
        return 2 + self.n_nonlinear

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]

    @property
    def is_linear_in_params(self) -> bool:
        """True when a reparameterization makes the model linear (closed-form GLS)."""
        return self in (Family.LINEAR, Family.QUADRATIC)


_N_NONLINEAR = {
    Family.LINEAR: 0,
    Family.EMAX: 1,
    Family.SIGEMAX: 2,
    Family.QUADRATIC: 1,
    Family.EXPONENTIAL: 1,
}

_PARAM_NAMES = {
    Family.LINEAR: ("e0", "slope"),
    Family.EMAX: ("e0", "eMax", "ed50"),
    Family.SIGEMAX: ("e0", "eMax", "ed50", "h"),
    Family.QUADRATIC: ("e0", "b1", "delta"),
    Family.EXPONENTIAL: ("e0", "e1", "delta"),
}


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

def _frozen_array(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DoseDesign:
    """Ordered dose grid.

    Placebo (dose 0) comes first, except for placebo-adjusted designs
    which hold the active doses only.
    """

    doses: NDArray[np.float64]
    plac_adj: bool = False

    def __post_init__(self) -> None:
        doses = _frozen_array(self.doses)
        if doses.ndim != 1 or doses.size < (1 if self.plac_adj else 2):
            raise ValidationError("a design needs a 1-D vector of at least two doses")
        if not np.all(np.isfinite(doses)):
            raise ValidationError("doses must be finite")
        if np.any(np.diff(doses) <= 0):
            raise ValidationError("doses must be strictly increasing without duplicates")
        if self.plac_adj:
            if doses[0] <= 0:
                raise ValidationError("placebo-adjusted designs hold active doses only (all > 0)")
        elif doses[0] != 0:
            raise ValidationError("the first dose must be placebo (0)")
        object.__setattr__(self, "doses", doses)

    @property
    def k(self) -> int:
        return int(self.doses.size)

    @property
    def max_dose(self) -> float:
        return float(self.doses[-1])

    def with_placebo(self) -> "DoseDesign":
        if not self.plac_adj:
            return self
        return DoseDesign(np.concatenate([[0.0], self.doses]))

    def active(self) -> "DoseDesign":
        if self.plac_adj:
            return self
        return DoseDesign(self.doses[1:], plac_adj=True)


@dataclass(frozen=True)
class CandidateModel:
    """A model family together with guesstimates for its nonlinear parameters."""

    family: Family
    guesstimates: tuple[float, ...] = ()
    label: str | None = None

    def __post_init__(self) -> None:
        family = Family.parse(self.family)
        guess = tuple(float(g) for g in np.asarray(self.guesstimates, dtype=float).ravel())
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "guesstimates", guess)
        validate_theta0(family, guess)

    @property
    def name(self) -> str:
        return self.label or self.family.value


def label_models(models: Sequence[CandidateModel]) -> list[CandidateModel]:
    """Give unlabeled models unique names (``sigemax1``, ``sigemax2``, ...)."""
    counts: dict[str, int] = {}
    for m in models:
        if m.label is None:
            counts[m.family.value] = counts.get(m.family.value, 0) + 1
    seen: dict[str, int] = {}
    out = []
    for m in models:
        if m.label is None and counts[m.family.value] > 1:
            seen[m.family.value] = seen.get(m.family.value, 0) + 1
            m = CandidateModel(m.family, m.guesstimates, f"{m.family.value}{seen[m.family.value]}")
        out.append(m)
    return out


# ---------------------------------------------------------------------------
# Parameter validation
# ---------------------------------------------------------------------------

def validate_theta0(
    family: Family | str, theta0: ArrayLike, max_dose: float | None = None
) -> None:
    """Raise :class:`InvalidParameterError` if ``theta0`` is invalid for ``family``.

    With ``max_dose`` given, the exponential ``delta`` must also clear the
    overflow floor ``max_dose / 700``.
    """
    family = Family.parse(family)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.shape[-1:] != (family.n_nonlinear,):
        raise InvalidParameterError(
            f"{family.value} takes {family.n_nonlinear} nonlinear parameter(s), "
            f"got {theta0.shape[-1] if theta0.ndim else 0}"
        )
    if not np.all(np.isfinite(theta0)):
        raise InvalidParameterError("nonlinear parameters must be finite")
    if family in (Family.EMAX, Family.SIGEMAX) and np.any(theta0[..., 0] <= 0):
        raise InvalidParameterError("ED50 must be strictly positive")
    if family is Family.SIGEMAX and np.any(theta0[..., 1] <= 0):
        raise InvalidParameterError("Hill coefficient must be strictly positive")
    if family is Family.EXPONENTIAL:
        if np.any(theta0[..., 0] <= 0):
            raise InvalidParameterError("exponential delta must be strictly positive")
        if max_dose is not None and np.any(theta0[..., 0] < EXP_DELTA_FLOOR * max_dose):
            raise InvalidParameterError(
                f"exponential delta below the overflow floor {EXP_DELTA_FLOOR * max_dose:.4g}"
            )


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

def _split(theta0: ArrayLike, x: ArrayLike, q: int):
    theta0 = np.asarray(theta0, dtype=float)
    if q == 0:
        return [], np.asarray(x, dtype=float)
    theta0 = np.atleast_1d(theta0)
    x = np.asarray(x, dtype=float)
    # parameters get trailing axes so they broadcast against x
    pars = [theta0[..., i].reshape(theta0.shape[:-1] + (1,) * x.ndim) for i in range(q)]
    return pars, x


def _pow(x: NDArray, h: NDArray) -> NDArray:
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.exp(h * np.log(np.where(x > 0, x, 1.0))), 0.0)


def eval_standardized(family: Family | str, theta0: ArrayLike, x: ArrayLike) -> NDArray:
    """Standardized model ``f0(x, theta0)``."""
    family = Family.parse(family)
    pars, x = _split(theta0, x, family.n_nonlinear)
    if family is Family.LINEAR:
        return x * 1.0
    if family is Family.EMAX:
        (ed50,) = pars
        return x / (x + ed50)
    if family is Family.SIGEMAX:
        ed50, h = pars
        # x^h / (x^h + e^h) = 1 / (1 + (e/x)^h), written to avoid overflow
        with np.errstate(divide="ignore", over="ignore"):
            ratio = np.where(x > 0, np.exp(h * (np.log(ed50) - np.log(np.where(x > 0, x, 1.0)))), np.inf)
        return 1.0 / (1.0 + ratio)
    if family is Family.QUADRATIC:
        (delta,) = pars
        return x + delta * x**2
    (delta,) = pars
    return np.expm1(x / delta)


def eval_full(family: Family | str, theta: ArrayLike, x: ArrayLike) -> NDArray:
    """Full model ``theta[0] + theta[1] * f0(x, theta[2:])``."""
    family = Family.parse(family)
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = theta.shape[:-1] + (1,) * x.ndim
    e0 = theta[..., 0].reshape(shape)
    scale = theta[..., 1].reshape(shape)
    return e0 + scale * eval_standardized(family, theta[..., 2:], x)


def gradient_full(family: Family | str, theta: ArrayLike, x: ArrayLike) -> NDArray:
    """Analytic gradient of :func:`eval_full` with respect to ``theta``.

    Returns an array of shape ``x.shape + (n_params,)`` for a single
    parameter vector; for scalar ``x`` that is simply ``(n_params,)``.
    """
    family = Family.parse(family)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise ValidationError("gradient_full expects a single parameter vector")
    x = np.asarray(x, dtype=float)
    scale = theta[1]
    cols = [np.ones_like(x), eval_standardized(family, theta[2:], x)]
    if family is Family.EMAX:
        ed50 = theta[2]
        cols.append(-scale * x / (x + ed50) ** 2)
    elif family is Family.SIGEMAX:
        ed50, h = theta[2], theta[3]
        f0 = cols[1]
        # d f0 / d ed50 = -(h / ed50) f0 (1 - f0); d f0 / d h = f0 (1 - f0) log(x / ed50)
        with np.errstate(divide="ignore", invalid="ignore"):
            logratio = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)) - np.log(ed50), 0.0)
        cols.append(-scale * (h / ed50) * f0 * (1.0 - f0))
        cols.append(scale * f0 * (1.0 - f0) * logratio)
    elif family is Family.QUADRATIC:
        cols.append(scale * x**2)
    elif family is Family.EXPONENTIAL:
        delta = theta[2]
        cols.append(-scale * x / delta**2 * np.exp(x / delta))
    return np.stack(cols, axis=-1)


def shape_vector(model: CandidateModel, design: DoseDesign) -> NDArray[np.float64]:
    """Standardized responses of a candidate model at the design doses."""
    validate_theta0(model.family, model.guesstimates, design.max_dose)
    return np.asarray(eval_standardized(model.family, model.guesstimates, design.doses), dtype=float)


# ---------------------------------------------------------------------------
# Quadratic helpers
# ---------------------------------------------------------------------------

def quadratic_vertex(delta: float) -> float:
    """Dose at which ``x + delta * x^2`` peaks (``delta < 0``)."""
    if delta >= 0:
        raise InvalidParameterError("a quadratic only has an interior maximum for delta < 0")
    return -1.0 / (2.0 * delta)


def quadratic_to_beta(theta: ArrayLike) -> NDArray[np.float64]:
    """``(e0, b1, delta)`` to the polynomial form ``(e0, b1, b2)``."""
    e0, b1, delta = np.asarray(theta, dtype=float)
    return np.array([e0, b1, b1 * delta])


def quadratic_from_beta(beta: ArrayLike) -> NDArray[np.float64]:
    """Polynomial ``(e0, b1, b2)`` to ``(e0, b1, delta)``."""
    e0, b1, b2 = np.asarray(beta, dtype=float)
    if b1 == 0:
        raise InvalidParameterError("b1 = 0 has no (e0, b1, delta) representation")
    return np.array([e0, b1, b2 / b1])


# ---------------------------------------------------------------------------
# Guesstimates and effect scaling
# ---------------------------------------------------------------------------

def max_standardized(family: Family | str, theta0: ArrayLike, max_dose: float) -> float:
    """Maximum of ``f0`` over ``[0, max_dose]``, located analytically."""
    family = Family.parse(family)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if family is Family.QUADRATIC:
        delta = float(theta0[0])
        if delta < 0 and quadratic_vertex(delta) <= max_dose:
            return -0.25 / delta
        return max(0.0, max_dose + delta * max_dose**2)
    # the remaining families increase monotonically for valid parameters
    return float(eval_standardized(family, theta0, max_dose))


def guesstimate_from_anchor(
    family: Family | str,
    anchors: tuple[float, float] | Sequence[tuple[float, float]],
    max_dose: float,
) -> tuple[float, ...]:
    """Nonlinear parameters reproducing a stated fraction of the maximum effect.

    ``anchors`` is a ``(dose, fraction)`` pair, or two pairs for the sigmoid
    Emax model.  The reference maximum is the plateau of the Emax and
    sigmoid Emax curves (so ``ed50 = d (1 - p) / p``) and the effect at
    ``max_dose`` for the exponential model.  The quadratic model takes the
    dose of maximum effect with ``fraction = 1``.

    Raises
    ------
    NoSolutionError
        When the anchor cannot be met by the family's shape.
    """
    family = Family.parse(family)
    pairs = np.atleast_2d(np.asarray(anchors, dtype=float))
    need = 2 if family is Family.SIGEMAX else 1
    if family is Family.LINEAR:
        return ()
    if pairs.shape != (need, 2):
        raise ValidationError(f"{family.value} needs {need} (dose, fraction) anchor(s)")
    d, p = pairs[:, 0], pairs[:, 1]
    if np.any(d <= 0) or np.any(d > max_dose):
        raise ValidationError("anchor doses must lie in (0, max_dose]")

    if family is Family.QUADRATIC:
        if p[0] != 1.0:
            raise ValidationError("quadratic anchors give the dose of maximum effect with fraction 1")
        return (-1.0 / (2.0 * d[0]),)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValidationError("anchor fractions must lie in (0, 1)")
    if family is Family.EMAX:
        return (float(d[0] * (1.0 - p[0]) / p[0]),)
    if family is Family.SIGEMAX:
        # (ed50 / d)^h = (1 - p) / p at both anchors: linear in (h, h log ed50)
        if d[0] == d[1]:
            raise ValidationError("sigmoid Emax anchors need two distinct doses")
        logit = np.log((1.0 - p) / p)
        h = (logit[0] - logit[1]) / (np.log(d[1]) - np.log(d[0]))
        if h <= 0:
            raise NoSolutionError("anchors are inconsistent with an increasing sigmoid Emax shape")
        return (float(d[0] * np.exp(logit[0] / h)), float(h))

    # exponential: ratio f0(d)/f0(max_dose) increases in delta from 0 to d/max_dose
    dd, pp = float(d[0]), float(p[0])
    if pp >= dd / max_dose:
        raise NoSolutionError(
            f"an exponential shape gives less than {dd / max_dose:.4g} of its maximum at dose {dd:g}"
        )

    def gap(log_delta: float) -> float:
        delta = np.exp(log_delta)
        ratio = np.exp((dd - max_dose) / delta) * np.expm1(-dd / delta) / np.expm1(-max_dose / delta)
        return ratio - pp

    lo, hi = np.log(EXP_DELTA_FLOOR * max_dose), np.log(1e8 * max_dose)
    if gap(lo) > 0 or gap(hi) < 0:
        raise NoSolutionError("no exponential delta matches the anchor")
    return (float(np.exp(brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14))),)


def scale_to_effects(
    model: CandidateModel,
    placebo_effect: float,
    max_effect: float,
    max_dose: float,
) -> NDArray[np.float64]:
    """Full parameters with a given placebo response and maximum effect on ``[0, max_dose]``.

    A negative ``max_effect`` scales the shape downward, so the extremum of
    ``f(x) - f(0)`` is then a minimum.
    """
    if max_effect == 0:
        raise ValidationError("max_effect must be nonzero")
    peak = max_standardized(model.family, model.guesstimates, max_dose)
    if not np.isfinite(peak) or peak <= 1e-12:
        raise DegenerateShapeError(f"{model.name} is flat on [0, {max_dose:g}]")
    return np.array([placebo_effect, max_effect / peak, *model.guesstimates], dtype=float)


def default_bounds(family: Family | str, max_dose: float) -> tuple[tuple[float, float], ...]:
    """Default box for the nonlinear parameters, scaled to the dose range."""
    family = Family.parse(family)
    if family is Family.EMAX:
        return ((1e-3 * max_dose, 1.5 * max_dose),)
    if family is Family.SIGEMAX:
        return ((1e-3 * max_dose, 1.5 * max_dose), HILL_BOUNDS)
    if family is Family.EXPONENTIAL:
        return ((0.05 * max_dose, 5.0 * max_dose),)
    return ()
