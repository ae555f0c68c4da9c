"""Least-squares drift estimators from discretely observed paths.

For ``dX = (alpha + theta X) dt + dG`` observed on ``[0, T]``, with
``S1 = ∫X dt`` and ``S2 = ∫X² dt`` (trapezoid rule),

    theta_hat = (T X_T² / 2 - X_T S1) / D,
    alpha_hat = (X_T S2 - X_T² S1 / 2) / D,     D = T S2 - S1²,

and ``mu_hat = alpha_hat / theta_hat``.  The OU estimator is
``Y_T² / (2 S2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (DegenerateDenominatorError, MuUndefinedError,
                         OverflowGuardError, ValidationError)
from .kernels import Kernel, limit_constants
from .simulate import GridPath, SdeParams
from .validation import check_paths, check_real

DEGENERACY_RTOL = 1e-14
EXP_GUARD = 700.0


@dataclass(frozen=True)
class VasicekEstimate:
    theta_hat: float
    alpha_hat: float
    mu_hat: float
    denom: float
    T: float
    n: int
    rule: str = "trapezoid"

    CSV_HEADER = "T,n,theta_hat,alpha_hat,mu_hat,denom"

    def to_csv_row(self) -> str:
        return (f"{self.T:.17g},{self.n},{self.theta_hat:.17g},{self.alpha_hat:.17g},"
                f"{self.mu_hat:.17g},{self.denom:.17g}")


@dataclass(frozen=True)
class NormalizedErrors:
    """``T^β e^{θT}(θ̂-θ)``, ``T^{1-H}(μ̂-μ)`` and ``T^{1-H}(α̂-α)``."""

    theta: float
    mu: float
    alpha: float
    log_abs_theta: float = field(default=-math.inf, repr=False)


def _moments(X: np.ndarray, T: float):
    n = X.shape[-1] - 1
    dt = T / n
    S1 = np.trapezoid(X, dx=dt, axis=-1)
    S2 = np.trapezoid(X * X, dx=dt, axis=-1)
    return S1, S2, X[..., -1]


def vasicek_statistics(X, T: float):
    """Vectorized estimator over rows of ``X``.

    Returns ``(theta_hat, alpha_hat, denom, degenerate)``; degenerate rows
    carry NaN estimates.
    """
    X = np.asarray(X, dtype=float)
    S1, S2, XT = _moments(X, T)
    denom = T * S2 - S1 * S1
    scale = np.maximum(1.0, np.max(np.abs(X), axis=-1) ** 2 * T * T)
    degenerate = ~(np.abs(denom) > DEGENERACY_RTOL * scale)
    safe = np.where(degenerate, 1.0, denom)
    theta = np.where(degenerate, np.nan, (0.5 * T * XT * XT - XT * S1) / safe)
    alpha = np.where(degenerate, np.nan, (XT * S2 - 0.5 * XT * XT * S1) / safe)
    return theta, alpha, denom, degenerate


def lse_vasicek(path: GridPath) -> VasicekEstimate:
    """Least-squares estimate of ``(theta, alpha, mu)`` from one path.

    Raises
    ------
    DegenerateDenominatorError
        If ``|T S2 - S1²|`` is below ``1e-14 max(1, max|X|² T²)``.
    MuUndefinedError
        If ``theta_hat == 0``.
    """
    X = check_paths(path.values)[0]
    T = path.grid.t_end
    theta, alpha, denom, bad = (v[0] for v in vasicek_statistics(X[None, :], T))
    if bad:
        raise DegenerateDenominatorError(f"least-squares denominator {denom:.3e} is degenerate")
    if theta == 0:
        raise MuUndefinedError("theta_hat = 0, so mu_hat = alpha_hat / theta_hat is undefined")
    return VasicekEstimate(float(theta), float(alpha), float(alpha / theta), float(denom),
                           T, path.grid.n_steps)


def ou_statistics(Y, T: float):
    """Vectorized ``Y_T² / (2 ∫Y²)``; rows with ``∫Y² = 0`` give NaN."""
    Y = np.asarray(Y, dtype=float)
    _, S2, YT = _moments(Y, T)
    degenerate = ~(S2 > 0)
    return np.where(degenerate, np.nan, YT * YT / (2 * np.where(degenerate, 1.0, S2))), degenerate


def lse_ou(path: GridPath) -> float:
    """``Y_T² / (2 ∫_0^T Y_t² dt)`` (trapezoid rule).

    Raises
    ------
    DegenerateDenominatorError
        If ``∫Y² dt = 0``.
    """
    Y = check_paths(path.values)[0]
    value, bad = ou_statistics(Y[None, :], path.grid.t_end)
    if bad[0]:
        raise DegenerateDenominatorError("∫Y² dt vanishes")
    return float(value[0])


def scaled_theta_error(theta_hat, theta: float, beta: float, T: float):
    """``T^β e^{θT}(θ̂ - θ)`` assembled as sign times ``exp(log magnitude)``.

    Returns ``(value, log_magnitude)``; works elementwise on arrays.

    Raises
    ------
    OverflowGuardError
        If any nonzero error would exceed ``e^700``.
    """
    diff = np.asarray(theta_hat, dtype=float) - theta
    with np.errstate(divide="ignore"):
        logmag = beta * math.log(T) + theta * T + np.log(np.abs(diff))
    if np.any(np.isfinite(logmag) & (logmag > EXP_GUARD)):
        raise OverflowGuardError(
            f"normalized theta error exceeds e^{EXP_GUARD:g} (θT = {theta * T:g})")
    value = np.where(diff == 0, 0.0, np.sign(diff) * np.exp(np.minimum(logmag, EXP_GUARD)))
    return value, logmag


def normalized_errors(est: VasicekEstimate, truth: SdeParams, kernel: Kernel,
                      T: float) -> NormalizedErrors:
    """Normalized estimation errors at the rates of the joint limit law."""
    T = check_real(T, "T", positive=True)
    lc = limit_constants(kernel, truth.theta)
    th, logmag = scaled_theta_error(est.theta_hat, truth.theta, lc.beta, T)
    rate = T ** (1 - lc.hurst)
    return NormalizedErrors(
        theta=float(th),
        mu=rate * (est.mu_hat - truth.mu),
        alpha=rate * (est.alpha_hat - truth.alpha),
        log_abs_theta=float(logmag),
    )


# -- scikit-learn style wrappers --------------------------------------------------

class VasicekLSE(TransformerMixin, BaseEstimator):
    """Least-squares Vasicek estimator over a batch of paths.

    Parameters
    ----------
    t_end : float or None
        Observation horizon ``T``.  May be omitted when fitting a
        :class:`~gaussvasicek.simulate.GridPath`.

    Attributes
    ----------
    theta_, alpha_, mu_, denom_ : ndarray of shape (n_paths,)
        Per-path estimates (NaN for degenerate paths).
    """

    def __init__(self, t_end: float | None = None):
        self.t_end = t_end

    def _prepare(self, X):
        if isinstance(X, GridPath):
            return check_paths(X.values), X.grid.t_end
        if self.t_end is None:
            raise ValidationError("t_end is required for array input")
        return check_paths(X), check_real(self.t_end, "t_end", positive=True)

    def fit(self, X, y=None):
        paths, T = self._prepare(X)
        theta, alpha, denom, bad = vasicek_statistics(paths, T)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(theta != 0, alpha / theta, np.nan)
        self.theta_, self.alpha_, self.mu_, self.denom_ = theta, alpha, mu, denom
        self.degenerate_ = bad
        self.n_features_in_ = paths.shape[1]
        return self

    def transform(self, X):
        """Columns ``theta_hat, alpha_hat, mu_hat`` for each path in ``X``."""
        check_is_fitted(self, "theta_")
        paths, T = self._prepare(X)
        theta, alpha, _, _ = vasicek_statistics(paths, T)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(theta != 0, alpha / theta, np.nan)
        return np.column_stack([theta, alpha, mu])


class OULSE(TransformerMixin, BaseEstimator):
    """Least-squares OU estimator ``Y_T² / (2∫Y²)`` over a batch of paths."""

    def __init__(self, t_end: float | None = None):
        self.t_end = t_end

    _prepare = VasicekLSE._prepare

    def fit(self, X, y=None):
        paths, T = self._prepare(X)
        self.theta_, self.degenerate_ = ou_statistics(paths, T)
        self.n_features_in_ = paths.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "theta_")
        paths, T = self._prepare(X)
        return ou_statistics(paths, T)[0][:, None]
