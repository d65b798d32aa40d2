"""Multiple contrast test over candidate dose-response shapes (the MCP step)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from dosekit.contrasts import ContrastMatrix, collapse_to_placebo, contrast_matrix
from dosekit.errors import SingularCovarianceError, ValidationError
from dosekit.models import CandidateModel, DoseDesign, label_models
from dosekit.mvn import QmcConfig, adjusted_pvalues, corr_from_cov, critical_value


@dataclass(frozen=True)
class AnovaEstimate:
    """First-stage estimates ``mu_hat ~ N(mu, S)``, one parameter per dose.

    With ``design.plac_adj`` the estimates are effects relative to placebo
    at the active doses.
    """

    design: DoseDesign
    mu: NDArray[np.float64]
    S: NDArray[np.float64]

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float).ravel()
        S = np.array(self.S, dtype=float)
        k = self.design.k
        if mu.size != k or S.shape != (k, k):
            raise ValidationError(
                f"design has {k} doses but estimates have shape {mu.shape} and covariance {S.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(S))):
            raise ValidationError("estimates and covariance must be finite")
        if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(S).max())):
            raise ValidationError("covariance must be symmetric")
        S = (S + S.T) / 2.0
        eig = np.linalg.eigvalsh(S)
        if eig.min() <= 1e-12 * max(np.trace(S), 0.0) / k or np.trace(S) <= 0:
            raise SingularCovarianceError("covariance of the first-stage estimates is not positive definite")
        mu.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "S", S)

    @property
    def plac_adj(self) -> bool:
        return self.design.plac_adj

    @property
    def doses(self) -> NDArray[np.float64]:
        return self.design.doses

    def negated(self) -> "AnovaEstimate":
        """Flip the sign, turning a decreasing endpoint into an increasing one."""
        return AnovaEstimate(self.design, -self.mu, self.S)

    def placebo_adjusted(self) -> "AnovaEstimate":
        """Collapse to differences from placebo: ``(C0 mu, C0 S C0')``."""
        if self.plac_adj:
            return self
        mu_c, s_c = collapse_to_placebo(self.mu, self.S)
        return AnovaEstimate(self.design.active(), mu_c, s_c)


@dataclass(frozen=True)
class MctResult:
    contrasts: ContrastMatrix
    z: NDArray[np.float64]
    critical: float
    adjusted_p: NDArray[np.float64]
    alpha: float
    corr: NDArray[np.float64]

    @property
    def labels(self) -> tuple[str, ...]:
        return self.contrasts.labels

    @property
    def zmax(self) -> float:
        return float(self.z.max())

    @property
    def significant(self) -> NDArray[np.bool_]:
        return self.z > self.critical

    @property
    def any_significant(self) -> bool:
        return bool(self.significant.any())

    def table(self) -> str:
        """Text table in descending order of the statistics."""
        order = np.argsort(-self.z, kind="stable")
        width = max(len(name) for name in self.labels) + 2
        lines = ["Multiple Contrast Test:", " " * width + "   z-Stat  adj-p"]
        for i in order:
            p = self.adjusted_p[i]
            ptxt = "<0.001" if p < 1e-3 else f"{p:.4f}"
            lines.append(f"{self.labels[i]:<{width}} {self.z[i]:8.3f}  {ptxt}")
        lines.append("")
        lines.append(f"Critical value: {self.critical:.3f} (alpha = {self.alpha:g}, one-sided)")
        return "\n".join(lines)


ContrastSource = Literal["observed", "planned"]


def mct_test(
    est: AnovaEstimate,
    models: Sequence[CandidateModel],
    alpha: float = 0.025,
    contrast_source: ContrastSource = "observed",
    planned_S: ArrayLike | None = None,
    cfg: QmcConfig | None = None,
    contrasts: ContrastMatrix | None = None,
) -> MctResult:
    """Max-contrast test for a dose-response signal.

    Contrasts come from the observed covariance ``est.S`` by default, or
    from ``planned_S`` with ``contrast_source="planned"``; a precomputed
    ``contrasts`` matrix overrides both.  Statistics always use the
    observed covariance:  ``z_m = c_m' mu / sqrt(c_m' S c_m)``.
    Guesstimates are taken as given and never re-estimated from the data.
    """
    if not 0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    models = label_models(models)
    if contrasts is None:
        if contrast_source == "planned":
            if planned_S is None:
                raise ValidationError("planned contrasts need the planning covariance")
            S_c = np.asarray(planned_S, dtype=float)
        elif contrast_source == "observed":
            S_c = est.S
        else:
            raise ValidationError(f"unknown contrast source {contrast_source!r}")
        contrasts = contrast_matrix(models, est.design, S_c, plac_adj=est.plac_adj)
    C = contrasts.matrix
    if C.shape[0] != est.design.k:
        raise ValidationError("contrast matrix does not match the design")
    V = C.T @ est.S @ C
    z = (C.T @ est.mu) / np.sqrt(np.diag(V))
    R = corr_from_cov(V)
    crit = critical_value(R, alpha, cfg)
    p = adjusted_pvalues(z, R, cfg)
    z.setflags(write=False)
    return MctResult(contrasts, z, crit, p, alpha, R)


def reference_set(result: MctResult, models: Sequence[CandidateModel]) -> list[CandidateModel]:
    """Significant models, in descending order of their statistic (ties keep input order)."""
    models = label_models(models)
    if len(models) != result.z.size:
        raise ValidationError("model list and test result disagree in length")
    order = np.argsort(-result.z, kind="stable")
    return [models[i] for i in order if result.significant[i]]


def raw_pvalues(result: MctResult) -> NDArray[np.float64]:
    """Unadjusted one-sided p-values of the individual contrast tests."""
    return special.ndtr(-result.z)
