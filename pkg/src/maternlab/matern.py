"""The three Matern parameterizations, conversions between them and Jacobians.

Parameter vectors are always ordered (scale, range, smoothness, nugget):

    m1: (sigma2, beta, nu, tau2)    sigma2 / (2^(nu-1) G(nu)) (h/beta)^nu K_nu(h/beta)
    m2: (phi, alpha, nu, tau2)      sqrt(pi) phi / (2^(nu-1) G(nu+1/2) alpha^(2nu)) (alpha h)^nu K_nu(alpha h)
    m3: (sigma2, rho, nu, tau2)     as m1 with argument 2 sqrt(nu) h / rho

The nugget tau2 is added wherever the lag is zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import ClassVar, Union

import numpy as np
from numba import njit
from scipy import optimize

from .specialfn import digamma, k_pair_c, order_consts

ZERO_LAG = 1e-14


class Variant(str, enum.Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"

    @classmethod
    def parse(cls, v) -> "Variant":
        if isinstance(v, Variant):
            return v
        try:
            return cls(str(v).lower())
        except ValueError:
            raise ValueError(f"unknown variant {v!r}; expected one of m1, m2, m3") from None


class _Params:
    variant: ClassVar[Variant]
    names: ClassVar[tuple[str, ...]]

    def __post_init__(self):
        vals = self.values()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite parameter in {self!r}")
        scale, rng, nu, tau2 = vals
        if scale < 0 or (self.variant is Variant.M2 and scale <= 0):
            raise ValueError(f"{self.names[0]} must be positive")
        if rng <= 0:
            raise ValueError(f"{self.names[1]} must be positive")
        if nu <= 0:
            raise ValueError("nu must be positive")
        if tau2 < 0:
            raise ValueError("tau2 must be non-negative")

    def values(self) -> tuple[float, float, float, float]:
        return tuple(float(getattr(self, f.name)) for f in fields(self))

    def array(self) -> np.ndarray:
        return np.array(self.values())

    @property
    def nu_value(self) -> float:
        return self.values()[2]

    @property
    def nugget(self) -> float:
        return self.values()[3]

    def replace(self, **kw):
        d = dict(zip(self.names, self.values()))
        d.update(kw)
        return type(self)(**d)


@dataclass(frozen=True)
class M1(_Params):
    sigma2: float
    beta: float
    nu: float
    tau2: float = 0.0
    variant: ClassVar[Variant] = Variant.M1
    names: ClassVar[tuple[str, ...]] = ("sigma2", "beta", "nu", "tau2")


@dataclass(frozen=True)
class M2(_Params):
    phi: float
    alpha: float
    nu: float
    tau2: float = 0.0
    variant: ClassVar[Variant] = Variant.M2
    names: ClassVar[tuple[str, ...]] = ("phi", "alpha", "nu", "tau2")


@dataclass(frozen=True)
class M3(_Params):
    sigma2: float
    rho: float
    nu: float
    tau2: float = 0.0
    variant: ClassVar[Variant] = Variant.M3
    names: ClassVar[tuple[str, ...]] = ("sigma2", "rho", "nu", "tau2")


MaternParams = Union[M1, M2, M3]
_CLASSES = {Variant.M1: M1, Variant.M2: M2, Variant.M3: M3}


def make_params(variant, values) -> MaternParams:
    """Build params of ``variant`` from a 3- or 4-vector (nugget defaults to 0)."""
    values = [float(v) for v in values]
    if len(values) == 3:
        values.append(0.0)
    if len(values) != 4:
        raise ValueError("expected 3 or 4 parameter values")
    return _CLASSES[Variant.parse(variant)](*values)


def param_names(variant) -> tuple[str, ...]:
    return _CLASSES[Variant.parse(variant)].names


def _gamma_ratio(nu):
    # Gamma(nu + 1/2) / Gamma(nu)
    return math.exp(math.lgamma(nu + 0.5) - math.lgamma(nu))


def partial_sill(p: MaternParams) -> float:
    """Covariance at lag 0 excluding the nugget."""
    if p.variant is Variant.M2:
        return math.sqrt(math.pi) * p.phi / (_gamma_ratio(p.nu) * p.alpha ** (2 * p.nu))
    return p.sigma2


def inverse_range(p: MaternParams) -> float:
    """Factor a such that the Bessel argument is x = a * h."""
    if p.variant is Variant.M1:
        return 1.0 / p.beta
    if p.variant is Variant.M2:
        return p.alpha
    return 2.0 * math.sqrt(p.nu) / p.rho


@njit(cache=True)
def xnu_k_consts(nu):
    # log of 2^(1-nu)/Gamma(nu), plus the Bessel order constants
    return (1.0 - nu) * math.log(2.0) - math.lgamma(nu), order_consts(nu)


@njit(cache=True)
def scaled_xnu_k(nu, logc, kc, x):
    """2^(1-nu)/Gamma(nu) x^nu K_nu(x); equals 1 at x = 0."""
    if x < ZERO_LAG:
        return 1.0
    k = k_pair_c(kc, x)[0]
    if not math.isfinite(k):
        return 1.0
    return math.exp(logc + nu * math.log(x)) * k


@njit(cache=True)
def correlation_kernel(nu, a, h):
    """Matern correlation at lags h (1-D array) with Bessel argument a*h."""
    logc, kc = xnu_k_consts(nu)
    out = np.empty(h.shape[0])
    for i in range(h.shape[0]):
        out[i] = 1.0 if h[i] < ZERO_LAG else scaled_xnu_k(nu, logc, kc, a * h[i])
    return out


def correlation(params: MaternParams, h):
    """Correlation function (no nugget), 1 at h = 0."""
    h = np.asarray(h, dtype=float)
    flat = np.ascontiguousarray(h.ravel())
    r = correlation_kernel(params.nu_value, inverse_range(params), flat)
    return float(r[0]) if h.ndim == 0 else r.reshape(h.shape)


def matern_eval(params: MaternParams, h):
    """Covariance at lag(s) h, including the nugget at zero lag."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lags must be non-negative")
    c = partial_sill(params) * correlation(params, h)
    c = c + params.nugget * (h < ZERO_LAG)
    return float(c) if np.ndim(c) == 0 else c


def convert(params: MaternParams, target) -> MaternParams:
    """Re-express params in another parameterization via the link functions."""
    target = Variant.parse(target)
    src = params.variant
    nu, tau2 = params.nu_value, params.nugget
    if src is target:
        return params
    g = _gamma_ratio(nu)
    sp = math.sqrt(math.pi)
    if src is Variant.M1:
        s2, beta = params.sigma2, params.beta
        if target is Variant.M2:
            return M2(s2 * g / (sp * beta ** (2 * nu)), 1.0 / beta, nu, tau2)
        return M3(s2, 2.0 * math.sqrt(nu) * beta, nu, tau2)
    if src is Variant.M2:
        phi, alpha = params.phi, params.alpha
        s2 = sp * phi / (g * alpha ** (2 * nu))
        if target is Variant.M1:
            return M1(s2, 1.0 / alpha, nu, tau2)
        return M3(s2, 2.0 * math.sqrt(nu) / alpha, nu, tau2)
    s2, rho = params.sigma2, params.rho
    if target is Variant.M1:
        return M1(s2, rho / (2.0 * math.sqrt(nu)), nu, tau2)
    c = 2.0 * math.sqrt(nu) / rho
    return M2(s2 * g * c ** (2 * nu) / sp, c, nu, tau2)


def _forward_jacobian(k: Variant, m: Variant, at_m: MaternParams) -> np.ndarray:
    """d theta_k / d theta_m at theta_m, for (k, m) in {(1,2), (1,3), (2,3)}."""
    J = np.eye(4)
    nu = at_m.nu_value
    if (k, m) == (Variant.M1, Variant.M2):
        phi, alpha = at_m.phi, at_m.alpha
        s2 = partial_sill(at_m)
        J[0, 0] = s2 / phi
        J[0, 1] = -2.0 * nu * s2 / alpha
        J[0, 2] = s2 * (digamma(nu) - digamma(nu + 0.5) - 2.0 * math.log(alpha))
        J[1, 1] = -1.0 / alpha ** 2
    elif (k, m) == (Variant.M1, Variant.M3):
        rho = at_m.rho
        J[1, 1] = 1.0 / (2.0 * math.sqrt(nu))
        J[1, 2] = -rho / (4.0 * nu ** 1.5)
    elif (k, m) == (Variant.M2, Variant.M3):
        s2, rho = at_m.sigma2, at_m.rho
        J[0, 0] = convert(at_m.replace(sigma2=1.0), Variant.M2).phi
        phi = J[0, 0] * s2
        J[0, 1] = -2.0 * nu * phi / rho
        J[0, 2] = phi * (digamma(nu + 0.5) - digamma(nu) + math.log(4.0 * nu) + 1.0
                         - 2.0 * math.log(rho))
        J[1, 1] = -2.0 * math.sqrt(nu) / rho ** 2
        J[1, 2] = 1.0 / (math.sqrt(nu) * rho)
    else:
        raise AssertionError((k, m))
    return J


_ORDER = {Variant.M1: 1, Variant.M2: 2, Variant.M3: 3}


def jacobian(source, target, at: MaternParams) -> np.ndarray:
    """Jacobian linking two parameterizations.

    Returns the 4x4 matrix J with J[i, j] = d(theta_source)_i / d(theta_target)_j,
    evaluated at the point ``at`` (any variant; it is converted as needed).
    With this orientation information matrices transport as
    I_target = J.T @ I_source @ J.  Pairs without a closed form are obtained
    by inverting the reverse Jacobian.
    """
    k, m = Variant.parse(source), Variant.parse(target)
    if k is m:
        return np.eye(4)
    if _ORDER[k] < _ORDER[m]:
        return _forward_jacobian(k, m, convert(at, m))
    return np.linalg.inv(_forward_jacobian(m, k, convert(at, k)))


def effective_range_solve(variant, nu: float, target_h: float, level: float = 0.05,
                          nugget: float = 0.0) -> MaternParams:
    """Unit-variance params whose correlation drops to ``level`` at ``target_h``.

    The range is found by a bracketing root search on the m1 range, starting
    from [1e-6, 1e3] and widening geometrically, then converted.
    """
    if not (0.0 < level < 1.0):
        raise ValueError("correlation level must lie in (0, 1)")
    if target_h <= 0:
        raise ValueError("target lag must be positive")

    def f(beta):
        return correlation(M1(1.0, beta, nu), target_h) - level

    lo, hi = 1e-6, 1e3
    for _ in range(60):
        if f(lo) < 0 < f(hi):
            break
        lo, hi = lo / 10.0, hi * 10.0
    else:
        raise RuntimeError("could not bracket the effective range")
    beta = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=500)
    return convert(M1(1.0, beta, nu, nugget), variant)
