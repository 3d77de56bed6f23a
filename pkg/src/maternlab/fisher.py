"""Fisher information for the covariance parameters and its transport between
parameterizations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .covmat import LocationSet, assemble, assemble_derivatives, cholesky_lower
from .matern import MaternParams, Variant, convert, jacobian, param_names


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    variant: Variant
    params: MaternParams

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return param_names(self.variant)[: self.p]

    def is_psd(self) -> bool:
        m = self.matrix
        shift = 1e-12 * max(np.trace(m), 0.0) / self.p
        try:
            cholesky_lower(m + shift * np.eye(self.p))
        except np.linalg.LinAlgError:
            return False
        return True


@dataclass(frozen=True)
class AsymptoticsReport:
    tav: np.ndarray
    corr: np.ndarray
    inverse: np.ndarray
    condition: float
    ok: bool
    names: tuple = ()


def fisher(locs: LocationSet, params: MaternParams, include_nugget: bool = False) -> FisherMatrix:
    """I_ij = tr(S^-1 S_i S^-1 S_j) / 2 for the model's covariance parameters.

    One Cholesky factorization; each S^-1 S_i comes from two triangular
    solves, and each trace is taken elementwise without forming the product.
    """
    p = 4 if include_nugget else 3
    L = assemble(locs, params).cholesky()
    derivs = assemble_derivatives(locs, params, tuple(range(p)))
    solved = []
    for D in derivs:
        Y = sla.solve_triangular(L, D, lower=True, check_finite=False)
        solved.append(sla.solve_triangular(L, Y, lower=True, trans="T", check_finite=False))
    info = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            # tr(A B) = sum_ab A_ab B_ba
            info[i, j] = info[j, i] = 0.5 * np.sum(solved[i] * solved[j].T)
    return FisherMatrix(info, params.variant, params)


def transform_fisher(fim: FisherMatrix, target) -> FisherMatrix:
    """Re-express an information matrix in another parameterization.

    I_target = J' I_source J with J = d theta_source / d theta_target.
    """
    target = Variant.parse(target)
    J = jacobian(fim.variant, target, fim.params)[: fim.p, : fim.p]
    m = J.T @ fim.matrix @ J
    return FisherMatrix(0.5 * (m + m.T), target, convert(fim.params, target))


def asymptotics(fim: FisherMatrix, cond_limit: float = 1e12) -> AsymptoticsReport:
    """Asymptotic variances (diagonal of the inverse) and correlations of the MLEs.

    A singular or numerically singular matrix yields ``ok=False`` with NaNs.
    """
    m = fim.matrix
    p = fim.p
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(m))
    nan = np.full(p, np.nan)
    if not np.isfinite(cond) or cond > cond_limit:
        return AsymptoticsReport(nan, np.full((p, p), np.nan), np.full((p, p), np.nan), cond,
                                 False, fim.names)
    inv = np.linalg.inv(m)
    inv = 0.5 * (inv + inv.T)
    tav = np.diag(inv).copy()
    ok = bool(np.all(tav > 0))
    sd = np.sqrt(np.where(tav > 0, tav, np.nan))
    corr = inv / np.outer(sd, sd)
    return AsymptoticsReport(tav, np.clip(corr, -1.0, 1.0), inv, cond, ok, fim.names)


def drv(sample_variance, tav):
    """Relative discrepancy between sample and asymptotic variances, |SV - TAV| / TAV."""
    sample_variance = np.asarray(sample_variance, dtype=float)
    tav = np.asarray(tav, dtype=float)
    return np.abs(sample_variance - tav) / tav
