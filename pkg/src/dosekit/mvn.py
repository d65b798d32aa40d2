"""Multivariate normal rectangle probabilities and max-test critical values.

``P(Z <= b)`` for ``Z ~ N(0, R)`` is computed by Genz's separation of
variables: after a Cholesky factorization with priority reordering, the
probability becomes an integral over the unit cube of dimension ``M - 1``,
which is estimated with randomly shifted rank-1 (Richtmyer) lattice rules
and the tent periodization.  The spread over independent shifts gives the
error estimate.  A fixed seed makes every result bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special
from scipy.optimize import brentq

from dosekit.errors import AccuracyWarning, ValidationError

MAX_DIM = 32
_TINY = 1e-12

_PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
    59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131,
)


@dataclass(frozen=True)
class QmcConfig:
    """Settings for the randomized quasi-Monte Carlo integration.

    The lattice size starts at ``points`` and doubles while the standard
    error over the ``shifts`` random shifts exceeds ``target_error`` and
    ``max_points`` allows (by default it does not grow).
    """

    points: int = 8192
    shifts: int = 12
    seed: int = 20240917
    target_error: float = 1e-5
    max_points: int = 0

    def __post_init__(self) -> None:
        if self.points < 64:
            raise ValidationError("QMC needs at least 64 points per shift")
        if self.shifts < 8:
            raise ValidationError("QMC needs at least 8 random shifts")
        if not self.target_error > 0:
            raise ValidationError("target error must be positive")
        if self.max_points < self.points:
            object.__setattr__(self, "max_points", self.points)


class MvnProbability(NamedTuple):
    value: float
    error: float


def corr_from_cov(V: ArrayLike) -> NDArray[np.float64]:
    """Correlation matrix ``V_ij / sqrt(V_ii V_jj)``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValidationError("covariance must be square")
    d = np.diag(V)
    if np.any(d <= 0):
        raise ValidationError("covariance has a nonpositive diagonal entry")
    s = np.sqrt(d)
    R = V / np.outer(s, s)
    R = (R + R.T) / 2.0
    np.fill_diagonal(R, 1.0)
    return R


def check_corr(R: ArrayLike) -> NDArray[np.float64]:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValidationError("correlation matrix must be square")
    if R.shape[0] > MAX_DIM:
        raise ValidationError(f"dimension {R.shape[0]} exceeds the supported maximum {MAX_DIM}")
    if not np.allclose(R, R.T, atol=1e-10):
        raise ValidationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-8):
        raise ValidationError("correlation matrix must have a unit diagonal")
    if np.linalg.eigvalsh(R).min() < -1e-10:
        raise ValidationError("correlation matrix is not positive semidefinite")
    return R


def _deduplicate(b: NDArray, R: NDArray) -> tuple[NDArray, NDArray]:
    """Merge perfectly correlated coordinates, keeping the tightest limit."""
    m = b.size
    keep: list[int] = []
    limit = b.copy()
    for i in range(m):
        twin = next((j for j in keep if R[i, j] >= 1.0 - 1e-10), None)
        if twin is None:
            keep.append(i)
        else:
            limit[twin] = min(limit[twin], b[i])
    idx = np.array(keep)
    return limit[idx], R[np.ix_(idx, idx)]


def _reorder_cholesky(b: NDArray, R: NDArray) -> tuple[NDArray, NDArray]:
    """Cholesky factor with Genz-Bretz priority ordering (most restrictive first)."""
    m = b.size
    b = b.copy()
    R = R.copy()
    L = np.zeros((m, m))
    y = np.zeros(m)
    for i in range(m):
        best, best_p = i, np.inf
        for j in range(i, m):
            s2 = R[j, j] - L[j, :i] @ L[j, :i]
            if s2 > _TINY:
                p = special.ndtr((b[j] - L[j, :i] @ y[:i]) / np.sqrt(s2))
            else:
                p = 1.0
            if p < best_p:
                best, best_p = j, p
        if best != i:
            b[[i, best]] = b[[best, i]]
            R[[i, best], :] = R[[best, i], :]
            R[:, [i, best]] = R[:, [best, i]]
            L[[i, best], :] = L[[best, i], :]
        s2 = R[i, i] - L[i, :i] @ L[i, :i]
        if s2 > _TINY:
            L[i, i] = np.sqrt(s2)
            L[i + 1:, i] = (R[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
            u = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
            # mean of a standard normal truncated to (-inf, u]
            y[i] = -np.exp(-0.5 * u * u - 0.5 * np.log(2 * np.pi) - special.log_ndtr(u))
        else:
            L[i, i] = 0.0
            y[i] = 0.0
    return b, L


def _lattice(n: int, dim: int) -> NDArray:
    z = np.sqrt(np.asarray(_PRIMES[:dim], dtype=float)) % 1.0
    k = np.arange(1, n + 1, dtype=float)[:, None]
    return (k * z) % 1.0


def _integrand(w: NDArray, b: NDArray, L: NDArray) -> NDArray:
    """Separation-of-variables integrand at points ``w`` in ``[0,1)^(M-1)``."""
    n, m = w.shape[0], b.size
    e = np.full(n, special.ndtr(b[0] / L[0, 0]))
    f = e.copy()
    y = np.empty((n, m - 1))
    for i in range(1, m):
        u = np.clip(w[:, i - 1] * e, 1e-300, 1.0 - 1e-16)
        y[:, i - 1] = special.ndtri(u)
        shift = y[:, :i] @ L[i, :i]
        if L[i, i] > 0:
            e = special.ndtr((b[i] - shift) / L[i, i])
        else:
            e = (shift <= b[i]).astype(float)
        f *= e
    return f


def _integrate(b: NDArray, R: NDArray, cfg: QmcConfig) -> MvnProbability:
    if np.any(np.isnan(b)):
        raise ValidationError("upper limits must not be NaN")
    if np.any(b == -np.inf):
        return MvnProbability(0.0, 0.0)
    finite = np.isfinite(b)
    if not finite.any():
        return MvnProbability(1.0, 0.0)
    b, R = b[finite], R[np.ix_(finite, finite)]
    b, R = _deduplicate(b, R)
    if b.size == 1:
        return MvnProbability(float(special.ndtr(b[0])), 0.0)

    b, L = _reorder_cholesky(b, R)
    dim = b.size - 1
    n = cfg.points
    while True:
        rng = np.random.default_rng(cfg.seed)
        shifts = rng.random((cfg.shifts, 1, dim))
        w = np.abs(2.0 * ((_lattice(n, dim)[None, :, :] + shifts) % 1.0) - 1.0)
        means = _integrand(w.reshape(-1, dim), b, L).reshape(cfg.shifts, n).mean(axis=1)
        err = float(means.std(ddof=1) / np.sqrt(cfg.shifts))
        if err <= cfg.target_error or 2 * n > cfg.max_points:
            break
        n *= 2
    return MvnProbability(float(np.clip(means.mean(), 0.0, 1.0)), err)


def _warn_accuracy(err: float, cfg: QmcConfig) -> None:
    if err > cfg.target_error:
        warnings.warn(
            f"MVN probability error estimate {err:.2e} exceeds target {cfg.target_error:.1e}",
            AccuracyWarning,
            stacklevel=3,
        )


def mvn_rect(
    upper: ArrayLike, R: ArrayLike, cfg: QmcConfig | None = None
) -> MvnProbability:
    """``P(Z <= upper)`` for ``Z ~ N(0, R)`` with a standard-error estimate.

    Emits :class:`AccuracyWarning` when the target error is not reached.
    """
    cfg = cfg or QmcConfig()
    R = check_corr(R)
    b = np.asarray(upper, dtype=float).ravel()
    if b.size != R.shape[0]:
        raise ValidationError("upper limits and correlation matrix dimensions differ")
    res = _integrate(b, R, cfg)
    _warn_accuracy(res.error, cfg)
    return res


def critical_value(R: ArrayLike, alpha: float, cfg: QmcConfig | None = None) -> float:
    """Equicoordinate quantile ``q`` with ``P(Z <= q 1) = 1 - alpha``.

    The root is bracketed by the single-test and Bonferroni quantiles.
    """
    if not 0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    cfg = cfg or QmcConfig()
    R = check_corr(R)
    m = R.shape[0]
    lo = float(special.ndtri(1.0 - alpha))
    if m == 1:
        return lo
    hi = float(special.ndtri(1.0 - alpha / m))
    worst = 0.0

    def gap(q: float) -> float:
        nonlocal worst
        res = _integrate(np.full(m, q), R, cfg)
        worst = max(worst, res.error)
        return res.value - (1.0 - alpha)

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo >= 0:
        q = lo
    elif g_hi <= 0:
        q = hi
    else:
        q = float(brentq(gap, lo, hi, xtol=1e-6))
    _warn_accuracy(worst, cfg)
    return q


def adjusted_pvalues(z: ArrayLike, R: ArrayLike, cfg: QmcConfig | None = None) -> NDArray[np.float64]:
    """Max-test adjusted p-values ``1 - P(Z <= z_m 1)``."""
    cfg = cfg or QmcConfig()
    R = check_corr(R)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != R.shape[0]:
        raise ValidationError("statistics and correlation matrix dimensions differ")
    if np.any(np.isnan(z)):
        raise ValidationError("statistics must not be NaN")
    m = z.size
    res = [_integrate(np.full(m, zm), R, cfg) for zm in z]
    _warn_accuracy(max(r.error for r in res), cfg)
    return np.clip(np.array([1.0 - r.value for r in res]), 0.0, 1.0)
