"""Optimal contrasts for candidate dose-response shapes.

For a shape ``mu0`` and covariance ``S`` the contrast maximizing the
noncentrality ``c'mu / sqrt(c'Sc)`` subject to ``c'1 = 0`` is::

    c  ~  S^{-1} (mu0 - (mu0' S^{-1} 1 / 1' S^{-1} 1) 1)

Placebo-adjusted estimates (effects relative to placebo) drop the zero-sum
constraint, giving ``d ~ S_C^{-1} mu0_C``.  Contrasts are scaled to unit
length and signed so they correlate positively with the shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from dosekit.errors import DegenerateShapeError, SingularCovarianceError, ValidationError
from dosekit.models import CandidateModel, DoseDesign, label_models, shape_vector


@dataclass(frozen=True)
class ContrastMatrix:
    """``K x M`` matrix of unit-norm contrasts, one column per candidate model."""

    matrix: NDArray[np.float64]
    labels: tuple[str, ...]
    plac_adj: bool = False

    def __post_init__(self) -> None:
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[1] != len(self.labels):
            raise ValidationError("contrast matrix columns and labels disagree")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_models(self) -> int:
        return self.matrix.shape[1]

    def column(self, label: str) -> NDArray[np.float64]:
        return self.matrix[:, self.labels.index(label)]


def cholesky(S: ArrayLike) -> tuple[NDArray, bool]:
    """Cholesky factor of a symmetric positive definite matrix (for ``cho_solve``)."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(S).max())):
        raise ValidationError("covariance must be symmetric")
    try:
        return linalg.cho_factor(S, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularCovarianceError(f"covariance is not positive definite: {exc}") from None


def noncentrality(c: ArrayLike, mu: ArrayLike, S: ArrayLike) -> float:
    """``c'mu / sqrt(c'Sc)``."""
    c = np.asarray(c, dtype=float)
    return float(c @ np.asarray(mu, dtype=float) / np.sqrt(c @ np.asarray(S, dtype=float) @ c))


def placebo_collapse_matrix(k: int) -> NDArray[np.float64]:
    """``(K-1) x K`` matrix ``[-1 | I]`` mapping responses to differences from placebo."""
    return np.hstack([-np.ones((k - 1, 1)), np.eye(k - 1)])


def collapse_to_placebo(mu: ArrayLike, S: ArrayLike) -> tuple[NDArray, NDArray]:
    """Placebo-adjusted estimates ``(C0 mu, C0 S C0')``."""
    mu = np.asarray(mu, dtype=float)
    C0 = placebo_collapse_matrix(mu.size)
    return C0 @ mu, C0 @ np.asarray(S, dtype=float) @ C0.T


def _finish(c: NDArray, mu0: NDArray) -> NDArray:
    norm = np.linalg.norm(c)
    if not np.isfinite(norm) or norm == 0:
        raise SingularCovarianceError("contrast could not be normalized")
    c = c / norm
    if c @ mu0 < 0:
        c = -c
    return c


def optimal_contrast(mu0: ArrayLike, S: ArrayLike) -> NDArray[np.float64]:
    """Optimal zero-sum contrast for shape ``mu0`` under covariance ``S``.

    Raises
    ------
    DegenerateShapeError
        If ``mu0`` is constant (every contrast annihilates it).
    SingularCovarianceError
        If ``S`` is not positive definite.
    """
    mu0 = np.asarray(mu0, dtype=float)
    if np.ptp(mu0) <= 1e-12 * (1.0 + np.linalg.norm(mu0)):
        raise DegenerateShapeError("constant shape: optimal contrast undefined")
    factor = cholesky(S)
    if mu0.size != factor[0].shape[0]:
        raise ValidationError("shape and covariance dimensions differ")
    s_mu = linalg.cho_solve(factor, mu0)
    s_one = linalg.cho_solve(factor, np.ones_like(mu0))
    c = s_mu - (s_mu.sum() / s_one.sum()) * s_one
    return _finish(c, mu0)


def optimal_contrast_placadj(mu0C: ArrayLike, SC: ArrayLike) -> NDArray[np.float64]:
    """Optimal weights for placebo-adjusted estimates: ``d ~ SC^{-1} mu0C``."""
    mu0C = np.asarray(mu0C, dtype=float)
    if np.linalg.norm(mu0C) <= 1e-12:
        raise DegenerateShapeError("zero placebo-adjusted shape: optimal contrast undefined")
    factor = cholesky(SC)
    if mu0C.size != factor[0].shape[0]:
        raise ValidationError("shape and covariance dimensions differ")
    return _finish(linalg.cho_solve(factor, mu0C), mu0C)


def contrast_matrix(
    models: Sequence[CandidateModel],
    design: DoseDesign,
    S: ArrayLike,
    plac_adj: bool | None = None,
) -> ContrastMatrix:
    """Optimal contrast for every candidate, columns in model order.

    For placebo-adjusted analyses ``design`` holds the active doses and ``S``
    is the covariance of the placebo-adjusted estimates.
    """
    if plac_adj is None:
        plac_adj = design.plac_adj
    if plac_adj and not design.plac_adj:
        design = design.active()
    models = label_models(models)
    if not models:
        raise ValidationError("at least one candidate model is required")
    S = np.asarray(S, dtype=float)
    if S.shape != (design.k, design.k):
        raise ValidationError(f"covariance is {S.shape}, design has {design.k} doses")
    solve = optimal_contrast_placadj if plac_adj else optimal_contrast
    cols = []
    for m in models:
        try:
            cols.append(solve(shape_vector(m, design), S))
        except DegenerateShapeError as exc:
            raise DegenerateShapeError(f"{m.name}: {exc}") from None
    return ContrastMatrix(np.column_stack(cols), tuple(m.name for m in models), plac_adj)
