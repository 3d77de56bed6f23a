"""Location sets, covariance assembly and derivative matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numba import njit

from .matern import (ZERO_LAG, MaternParams, Variant, inverse_range, partial_sill,
                     scaled_xnu_k, xnu_k_consts)
from .specialfn import digamma, k_pair_c, order_consts

DEFAULT_NB = 50
FD_ORDER_STEP = 1e-9


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization failed; ``minor`` is the failing leading minor (1-based)."""

    def __init__(self, minor: int, context: str = ""):
        self.minor = int(minor)
        msg = f"matrix is not positive definite: leading minor of order {self.minor} fails"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


@dataclass(frozen=True)
class LocationSet:
    """Planar locations; row order is the matrix row/column order."""

    coords: np.ndarray
    nb: int = DEFAULT_NB

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.coords, dtype=float))
        if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 1:
            raise ValueError("coordinates must be an (n, 2) array with n >= 1")
        if not np.all(np.isfinite(c)):
            raise ValueError("coordinates must be finite")
        if self.nb < 1:
            raise ValueError("tile size must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "LocationSet":
        return LocationSet(self.coords[np.asarray(idx)], self.nb)

    def distances(self, other: "LocationSet | None" = None) -> np.ndarray:
        b = self.coords if other is None else other.coords
        d = self.coords[:, None, :] - b[None, :, :]
        return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


@dataclass
class CovMatrix:
    """Dense covariance matrix with a lazily computed lower Cholesky factor."""

    data: np.ndarray
    params: MaternParams | None = None
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol = cholesky_lower(self.data)
        return self._chol


def cholesky_lower(a: np.ndarray) -> np.ndarray:
    c, info = sla.lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info)
    if info < 0:
        raise ValueError(f"invalid argument {-info} to the Cholesky routine")
    return c


@njit(cache=True)
def _fill_sym(out, xy, nb, nu, a, sill, tau2):
    n = xy.shape[0]
    nt = (n + nb - 1) // nb
    logc, kc = xnu_k_consts(nu)
    for bi in range(nt):
        for bj in range(bi + 1):
            for i in range(bi * nb, min(n, (bi + 1) * nb)):
                jmax = min((bj + 1) * nb, i + 1)
                for j in range(bj * nb, jmax):
                    dx = xy[i, 0] - xy[j, 0]
                    dy = xy[i, 1] - xy[j, 1]
                    h = math.sqrt(dx * dx + dy * dy)
                    if i == j:
                        v = sill + tau2
                    elif h < ZERO_LAG:
                        v = sill
                    else:
                        v = sill * scaled_xnu_k(nu, logc, kc, a * h)
                    out[i, j] = v
                    out[j, i] = v


@njit(cache=True)
def _fill_cross(out, xa, xb, nu, a, sill):
    logc, kc = xnu_k_consts(nu)
    for i in range(xa.shape[0]):
        for j in range(xb.shape[0]):
            dx = xa[i, 0] - xb[j, 0]
            dy = xa[i, 1] - xb[j, 1]
            h = math.sqrt(dx * dx + dy * dy)
            if h < ZERO_LAG:
                out[i, j] = sill
            else:
                out[i, j] = sill * scaled_xnu_k(nu, logc, kc, a * h)


def assemble(locs: LocationSet, params: MaternParams, nb: int | None = None) -> CovMatrix:
    """Covariance matrix of ``params`` over ``locs``.

    Entries are filled tile by tile (lower tiles, mirrored); each entry depends
    only on its own pair of points so the tile size never changes the result.
    The nugget is added on the diagonal only.
    """
    n = locs.n
    out = np.empty((n, n))
    _fill_sym(out, locs.coords, int(nb or locs.nb), params.nu_value, inverse_range(params),
              partial_sill(params), params.nugget)
    return CovMatrix(out, params)


def assemble_cross(a: LocationSet, b: LocationSet, params: MaternParams) -> np.ndarray:
    """Cross-covariance between two location sets.

    The nugget models independent measurement error, so it never enters
    covariances between distinct observations, even at coincident coordinates.
    """
    out = np.empty((a.n, b.n))
    _fill_cross(out, a.coords, b.coords, params.nu_value, inverse_range(params),
                partial_sill(params))
    return out


@njit(cache=True)
def _bessel_terms(nu, x, step):
    # K_nu, K_{nu+1} and the forward difference in order, elementwise
    k = np.empty(x.shape[0])
    k1 = np.empty(x.shape[0])
    dk = np.empty(x.shape[0])
    kc = order_consts(nu)
    kc_step = order_consts(nu + step)
    for i in range(x.shape[0]):
        a, b = k_pair_c(kc, x[i])
        k[i] = a
        k1[i] = b
        dk[i] = (k_pair_c(kc_step, x[i])[0] - a) / step
    return k, k1, dk


def assemble_derivatives(locs: LocationSet, params: MaternParams, indices=(0, 1, 2, 3)):
    """Derivative matrices dSigma/dtheta_i for the requested parameter indices.

    Range derivatives use K'_nu(x) = nu K_nu(x)/x - K_{nu+1}(x), the same
    recurrence identity as -(K_{nu-1} + K_{nu+1})/2 rearranged.  Order
    derivatives of K_nu use a forward difference with step 1e-9.
    """
    indices = tuple(int(i) for i in indices)
    if any(i not in (0, 1, 2, 3) for i in indices):
        raise ValueError("parameter index must be in 0..3")
    n = locs.n
    iu, ju = np.triu_indices(n, k=1)
    d = locs.coords[iu] - locs.coords[ju]
    h = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    zero = h < ZERO_LAG
    nu = params.nu_value
    a = inverse_range(params)
    s = partial_sill(params)
    x = a * np.where(zero, 1.0, h)
    step = (nu + FD_ORDER_STEP) - nu
    if any(i != 3 for i in indices):
        k, k1, dk = _bessel_terms(nu, np.ascontiguousarray(x), step)
        w = np.exp((1.0 - nu) * math.log(2.0) - math.lgamma(nu) + nu * np.log(x))
        r = w * k
    v = params.variant
    out = {}
    for idx in indices:
        if idx == 3:
            vals = np.zeros_like(h)
            diag = 1.0
        elif idx == 0:
            # linear in the scale parameter
            if v is Variant.M2:
                vals, diag = s * r / params.phi, s / params.phi
            else:
                vals, diag = r, 1.0
        elif idx == 1:
            if v is Variant.M1:
                vals, diag = -s * w * (2 * nu * k - x * k1) / params.beta, 0.0
            elif v is Variant.M3:
                vals, diag = -s * w * (2 * nu * k - x * k1) / params.rho, 0.0
            else:
                vals, diag = -s * w * x * k1 / params.alpha, -2.0 * nu * s / params.alpha
        else:
            if v is Variant.M2:
                lead = -2.0 * math.log(params.alpha) - math.log(2.0) - digamma(nu + 0.5)
                vals = s * w * ((lead + np.log(x)) * k + dk)
                diag = s * (digamma(nu) - digamma(nu + 0.5) - 2.0 * math.log(params.alpha))
            else:
                vals = s * w * ((-math.log(2.0) - digamma(nu) + np.log(x)) * k + dk)
                if v is Variant.M3:
                    # the Bessel argument also depends on nu
                    vals = vals + s * w * (2 * nu * k - x * k1) / (2 * nu)
                diag = 0.0
        if idx != 3 and np.any(zero):
            vals = np.where(zero, diag, vals)
        m = np.empty((n, n))
        m[iu, ju] = vals
        m[ju, iu] = vals
        np.fill_diagonal(m, diag)
        out[idx] = m
    return [out[i] for i in indices]


def assemble_derivative(locs: LocationSet, params: MaternParams, index: int) -> np.ndarray:
    """Single derivative matrix dSigma/dtheta_index."""
    return assemble_derivatives(locs, params, (index,))[0]
