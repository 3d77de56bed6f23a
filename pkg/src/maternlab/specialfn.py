"""Modified Bessel function of the second kind and related special functions.

K_nu is evaluated at a reduced order |mu| <= 1/2 with Temme's series for
x <= 2, the trapezoidal rule on int_0^inf exp(-x cosh t) cosh(mu t) dt for
2 < x <= 12 (geometrically convergent because the integrand is even and
analytic; step 0.2 gives ~1e-15 relative error there), and Steed's continued
fraction beyond, followed by the stable upward recurrence in order.  The kernels are compiled with numba so
covariance assembly can call them over whole distance matrices.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

__all__ = [
    "BesselOrderDeriv",
    "DerivMethod",
    "QuadratureWarning",
    "bessel_k",
    "bessel_k_dx",
    "bessel_k_dnu",
    "digamma",
]

_EPS = 1e-16
_MAXIT = 10000
_TRAP_MAX_X = 12.0
_TRAP_STEP = 0.2

# Taylor coefficients of 1/Gamma(1 + x) about 0 (computed to 40 digits with
# mpmath and rounded to double).  Used for Temme's gamma1/gamma2, which are
# otherwise a cancellation hazard near mu = 0.
_RGAMMA1P = np.array([
    1.0,
    0.5772156649015329,
    -0.6558780715202539,
    -0.04200263503409524,
    0.16653861138229148,
    -0.04219773455554433,
    -0.009621971527876973,
    0.0072189432466631,
    -0.0011651675918590652,
    -0.00021524167411495098,
    0.0001280502823881162,
    -2.013485478078824e-05,
    -1.2504934821426706e-06,
    1.133027231981696e-06,
    -2.056338416977607e-07,
    6.116095104481416e-09,
    5.002007644469223e-09,
    -1.18127457048702e-09,
    1.0434267116911005e-10,
    7.782263439905071e-12,
    -3.696805618642206e-12,
    5.100370287454476e-13,
    -2.0583260535665066e-14,
    -5.348122539423018e-15,
    1.2267786282382608e-15,
    -1.1812593016974588e-16,
    1.1866922547516004e-18,
    1.4123806553180319e-18,
    -2.29874568443537e-19,
])


@njit(cache=True)
def _temme_gammas(mu):
    # gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu),  gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
    gam1 = 0.0
    gam2 = 0.0
    p = 1.0
    for j in range(_RGAMMA1P.shape[0]):
        if j % 2 == 0:
            gam2 += _RGAMMA1P[j] * p
        else:
            gam1 -= _RGAMMA1P[j] * (p / mu if mu != 0.0 else 0.0)
        p *= mu
    if mu == 0.0:
        gam1 = -_RGAMMA1P[1]
    return gam1, gam2


@njit(cache=True)
def order_consts(nu):
    """Quantities depending only on the order, shared by all arguments.

    Returns (nl, mu, gam1, gam2, gampl, gammi, fact) with nu = nl + mu,
    |mu| <= 1/2.
    """
    nl = int(nu + 0.5)
    mu = nu - nl
    gam1, gam2 = _temme_gammas(mu)
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    return nl, mu, gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1, fact


@njit(cache=True)
def _k_trapezoid(mu, x):
    # terms for mu and mu + 1 share exp(-x cosh t); e^t and e^{mu t} advance by products
    h = _TRAP_STEP
    eh = math.exp(h)
    emh = math.exp(mu * h)
    et = 1.0
    emt = 1.0
    s0 = 0.5 * math.exp(-x)
    s1 = s0
    for _ in range(_MAXIT):
        et *= eh
        emt *= emh
        g = math.exp(-0.5 * x * (et + 1.0 / et))
        e1 = emt * et
        t0 = 0.5 * g * (emt + 1.0 / emt)
        t1 = 0.5 * g * (e1 + 1.0 / e1)
        s0 += t0
        s1 += t1
        if t1 < 1e-17 * s1:
            break
    return h * s0, h * s1


@njit(cache=True)
def _k_reduced(mu, x, gam1, gam2, gampl, gammi, fact):
    """K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2."""
    if x <= 2.0:
        x2 = 0.5 * x
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        total1 = p
        for i in range(1, _MAXIT):
            fi = float(i)
            ff = (fi * ff + p + q) / (fi * fi - mu * mu)
            c *= d / fi
            p /= fi - mu
            q /= fi + mu
            delta = c * ff
            total += delta
            total1 += c * (p - fi * ff)
            if abs(delta) < abs(total) * _EPS:
                break
        return total, total1 * 2.0 / x
    if x <= _TRAP_MAX_X:
        return _k_trapezoid(mu, x)
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    return kmu, kmu * (mu + x + 0.5 - h) / x


@njit(cache=True)
def k_pair_c(consts, x):
    """K_nu(x), K_{nu+1}(x) given ``order_consts(nu)``."""
    nl, mu, gam1, gam2, gampl, gammi, fact = consts
    kmu, k1 = _k_reduced(mu, x, gam1, gam2, gampl, gammi, fact)
    for i in range(1, nl + 1):
        knext = (mu + i) * (2.0 / x) * k1 + kmu
        kmu = k1
        k1 = knext
    return kmu, k1


@njit(cache=True)
def _k_pair(nu, x):
    """K_nu(x) and K_{nu+1}(x) for nu >= 0, x > 0."""
    return k_pair_c(order_consts(nu), x)


@njit(cache=True)
def k_array(nu, x):
    """Elementwise K_nu over a 1-D array of positive arguments."""
    consts = order_consts(nu)
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = k_pair_c(consts, x[i])[0]
    return out


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("K_nu is only defined here for x > 0")
    return x


def _eval(nu, x):
    scalar = np.ndim(x) == 0
    x = _check_x(x)
    vals = k_array(abs(float(nu)), np.ascontiguousarray(x.ravel()))
    if np.any(np.isinf(vals)):
        raise OverflowError(f"K_{nu} overflows double precision at the given argument")
    return float(vals[0]) if scalar else vals.reshape(x.shape)


def bessel_k(nu, x):
    """Modified Bessel function of the second kind, K_nu(x).

    Parameters
    ----------
    nu : float
        Real order; negative orders use K_{-nu} = K_nu.
    x : float or array_like
        Positive argument(s).

    Returns
    -------
    float or ndarray

    Raises
    ------
    ValueError
        If any x <= 0.
    OverflowError
        If the result exceeds the double range (very small x, large order).
    """
    return _eval(nu, x)


def bessel_k_dx(nu, x):
    """Derivative of K_nu with respect to its argument.

    Uses K'_nu(x) = -(K_{nu-1}(x) + K_{nu+1}(x)) / 2.
    """
    return -0.5 * (_eval(nu - 1.0, x) + _eval(nu + 1.0, x))


class DerivMethod(enum.Enum):
    FD = "fd"
    EXACT = "exact"
    INTG = "intg"
    ASYM = "asym"


@dataclass(frozen=True)
class BesselOrderDeriv:
    """Method selector for the order derivative of K_nu.

    ``increment`` only matters for the forward-difference method.
    """

    method: DerivMethod = DerivMethod.FD
    increment: float = 1e-9

    def __post_init__(self):
        if not isinstance(self.method, DerivMethod):
            object.__setattr__(self, "method", DerivMethod(str(self.method).lower()))
        if not (0.0 < self.increment <= 1e-6):
            raise ValueError("forward-difference increment must lie in (0, 1e-6]")


class QuadratureWarning(RuntimeWarning):
    """Adaptive quadrature did not reach the requested accuracy."""


def _intg_upper(nu, x):
    # exponent g(t) = nu*t - x*cosh(t) peaks at asinh(nu/x); go past it until
    # the integrand has fallen by e^-45 relative to the peak
    t_peak = math.asinh(nu / x) if nu > 0 else 0.0
    g_peak = nu * t_peak - x * math.cosh(t_peak)
    t = max(t_peak, 1.0)
    while nu * t - x * math.cosh(t) > g_peak - 45.0 - math.log(t + 1.0):
        t *= 1.25
    return t_peak, t


def _dnu_intg(nu, x):
    t_peak, t_max = _intg_upper(nu, x)
    # scale by the peak so quad works with O(1) values
    shift = nu * t_peak - x * math.cosh(t_peak)

    def integrand(t):
        # sinh(nu t) e^{-x cosh t} = (e^{nu t} - e^{-nu t}) / 2 * e^{-x cosh t}
        a = nu * t - x * math.cosh(t) - shift
        b = -nu * t - x * math.cosh(t) - shift
        return 0.5 * t * (math.exp(a) - math.exp(b))

    points = [t_peak] if 0.0 < t_peak < t_max else None
    val, err = integrate.quad(integrand, 0.0, t_max, points=points, epsabs=0.0,
                              epsrel=1e-12, limit=400, full_output=0)
    scale = math.exp(shift)
    val *= scale
    err *= scale
    if err > max(1e-10, 1e-10 * abs(val)):
        warnings.warn(f"order-derivative quadrature error estimate {err:.3e}",
                      QuadratureWarning, stacklevel=3)
    return val


def _dnu_exact(n, x):
    if x <= 0:
        raise ValueError("x must be positive")
    total = 0.0
    half = 0.5 * x
    for i in range(n):
        total += half ** (i - n) / (math.factorial(i) * (n - i)) * _eval(i, x)
    return 0.5 * math.factorial(n) * total


def bessel_k_dnu(nu, x, method=BesselOrderDeriv()):
    """Derivative of K_nu(x) with respect to the order.

    Parameters
    ----------
    nu : float
    x : float
        Positive argument (scalar only for EXACT/INTG/ASYM).
    method : BesselOrderDeriv or DerivMethod or str
        FD is the forward difference (K_{nu+d} - K_nu)/d, EXACT the closed
        form for positive integer orders, INTG adaptive quadrature of
        int_0^inf t e^{-x cosh t} sinh(nu t) dt, ASYM the large-order
        approximation K_nu(x)(1 - 1/(2 nu) - log(e x / (2 nu))).
    """
    if not isinstance(method, BesselOrderDeriv):
        method = BesselOrderDeriv(DerivMethod(str(getattr(method, "value", method)).lower()))
    m = method.method
    if m is DerivMethod.FD:
        # divide by the increment actually representable at this order
        d = (nu + method.increment) - nu
        return (_eval(nu + d, x) - _eval(nu, x)) / d
    x = float(x)
    if x <= 0:
        raise ValueError("K_nu is only defined here for x > 0")
    if m is DerivMethod.EXACT:
        if nu != int(nu) or nu < 1:
            raise ValueError("the exact integer form requires a positive integer order")
        return _dnu_exact(int(nu), x)
    if m is DerivMethod.INTG:
        return _dnu_intg(abs(nu), x) * (1.0 if nu >= 0 else -1.0)
    if nu <= 0:
        raise ValueError("the asymptotic form requires nu > 0")
    return _eval(nu, x) * (1.0 - 1.0 / (2.0 * nu) - math.log(math.e * x / (2.0 * nu)))


# Bernoulli terms B_2k / (2k) for the digamma asymptotic series
_DIGAMMA_ASYM = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132,
                 -691.0 / 32760, 1.0 / 12)


def digamma(x):
    """Digamma function psi(x) = Gamma'(x) / Gamma(x) for real x.

    Negative non-integers go through reflection; non-positive integers are
    poles and raise ValueError.
    """
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise ValueError("digamma has a pole at non-positive integers")
    if x < 0:
        return digamma(1.0 - x) - math.pi / math.tan(math.pi * x)
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    p = inv2
    for c in _DIGAMMA_ASYM:
        series += c * p
        p *= inv2
    return acc + math.log(x) - 0.5 / x - series
