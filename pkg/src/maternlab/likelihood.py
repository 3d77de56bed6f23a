"""Gaussian log-likelihood, its score, and maximum-likelihood fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .covmat import CovMatrix, LocationSet, NotPositiveDefiniteError, assemble
from .matern import MaternParams, Variant, make_params, param_names
from .optimize import minimize_bobyqa, minimize_nelder_mead

DEFAULT_INTERVAL = (0.01, 5.0)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be 1-D arrays of equal length")
        if np.any(lo >= hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if np.any(lo <= 0):
            raise ValueError("lower bounds must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return self.lower.size

    def head(self, p: int) -> "Bounds":
        return Bounds(self.lower[:p], self.upper[:p])

    def log_midpoint(self) -> np.ndarray:
        return np.sqrt(self.lower * self.upper)


@dataclass
class FitResult:
    mle: MaternParams
    loglik: float
    iterations: int
    converged: bool
    on_bound: tuple = ()
    pd_failures: int = 0
    message: str = ""
    trace: list | None = field(default=None, repr=False)


def _cholesky_of(cov) -> np.ndarray:
    if isinstance(cov, CovMatrix):
        return cov.cholesky()
    from .covmat import cholesky_lower
    return cholesky_lower(np.asarray(cov, dtype=float))


def loglik(cov, z) -> float:
    """Zero-mean Gaussian log-likelihood of z under covariance ``cov``.

    Raises NotPositiveDefiniteError when the Cholesky factorization fails.
    """
    z = np.asarray(z, dtype=float)
    L = _cholesky_of(cov)
    if z.shape != (L.shape[0],):
        raise ValueError("observation vector length does not match the covariance")
    w = sla.solve_triangular(L, z, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * logdet - 0.5 * (w @ w) - 0.5 * z.size * LOG_2PI)


def score(cov, derivs, z) -> np.ndarray:
    """Analytic gradient of the log-likelihood with respect to each derivative matrix.

    -tr(S^-1 S_k)/2 + u' S_k u / 2 with u = S^-1 z.  Diagnostic use only.
    """
    L = _cholesky_of(cov)
    z = np.asarray(z, dtype=float)
    u = sla.cho_solve((L, True), z, check_finite=False)
    out = []
    for D in derivs:
        X = sla.cho_solve((L, True), D, check_finite=False)
        out.append(-0.5 * np.trace(X) + 0.5 * u @ D @ u)
    return np.array(out)


def _scaled_interval(value: float) -> tuple[float, float]:
    lo, hi = DEFAULT_INTERVAL
    v = abs(value)
    if v < 2:
        f = 1.0
    elif v <= 20:
        f = 10.0
    elif v <= 50:
        f = 20.0
    elif v <= 500:
        f = 200.0
    else:
        f = 1000.0
    return lo * f, hi * f


def scale_bounds(true_or_guess: MaternParams) -> Bounds:
    """Search box for all four parameters, with the default interval (0.01, 5)
    multiplied according to the magnitude of each supplied value."""
    iv = [_scaled_interval(v) for v in true_or_guess.values()]
    return Bounds(np.array([a for a, _ in iv]), np.array([b for _, b in iv]))


def default_bounds(p: int = 4) -> Bounds:
    return Bounds(np.full(p, DEFAULT_INTERVAL[0]), np.full(p, DEFAULT_INTERVAL[1]))


CovBuilder = Callable[[LocationSet, MaternParams], np.ndarray]


def _dense_builder(locs, params):
    return assemble(locs, params).data


def fit(locs: LocationSet, z, variant, bounds: Bounds | None = None,
        start: MaternParams | None = None, tol: float = 1e-5, *, nugget: bool = False,
        fixed_nugget: float = 0.0, maxfun: int = 5000, optimizer: str = "bobyqa",
        keep_trace: bool = False, cov_builder: CovBuilder | None = None) -> FitResult:
    """Maximum-likelihood estimate of the Matern parameters.

    Parameters
    ----------
    locs, z
        Locations and observations.
    variant
        Parameterization to optimize over (``"m1"``, ``"m2"``, ``"m3"``).
    bounds
        Search box; 3 entries (no nugget) or 4.  Defaults to (0.01, 5) each.
    start
        Starting point; defaults to the log-space midpoint of the box.
    tol
        Relative objective change that ends the search.
    nugget
        Estimate the nugget as a fourth parameter; otherwise it is held at
        ``fixed_nugget``.
    optimizer
        ``"bobyqa"`` (quadratic-model trust region) or ``"nelder-mead"``.
    cov_builder
        Replaces dense assembly, e.g. with a compressed approximation.

    Returns
    -------
    FitResult
        ``iterations`` counts objective evaluations.  Points where the
        covariance is not positive definite are rejected and counted in
        ``pd_failures``.
    """
    variant = Variant.parse(variant)
    z = np.asarray(z, dtype=float)
    if z.shape != (locs.n,):
        raise ValueError("observation vector length does not match the locations")
    p = 4 if nugget else 3
    if bounds is None:
        bounds = default_bounds(p)
    elif len(bounds) != p:
        bounds = bounds.head(p) if len(bounds) > p else None
        if bounds is None:
            raise ValueError(f"expected {p} bounds for this fit")
    x0 = bounds.log_midpoint() if start is None else np.asarray(start.values()[:p], dtype=float)
    if np.any(x0 <= bounds.lower) or np.any(x0 >= bounds.upper):
        raise ValueError("starting point must lie strictly inside the bounds")
    builder = cov_builder or _dense_builder
    pd_failures = 0
    trace = [] if keep_trace else None

    def to_params(x):
        v = list(x) + ([] if nugget else [fixed_nugget])
        return make_params(variant, v)

    def objective(x):
        nonlocal pd_failures
        params = to_params(x)
        try:
            ll = loglik(builder(locs, params), z)
        except NotPositiveDefiniteError:
            pd_failures += 1
            ll = -math.inf
        if trace is not None:
            trace.append((params, ll))
        return -ll

    if optimizer == "bobyqa":
        res = minimize_bobyqa(objective, x0, bounds.lower, bounds.upper, ftol_rel=tol,
                              maxfun=maxfun)
    elif optimizer in ("nelder-mead", "nm"):
        res = minimize_nelder_mead(objective, x0, bounds.lower, bounds.upper, ftol_rel=tol,
                                   maxfun=maxfun)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    mle = to_params(res.x)
    width = bounds.upper - bounds.lower
    names = param_names(variant)
    hit = tuple(names[i] for i in range(p)
                if min(res.x[i] - bounds.lower[i], bounds.upper[i] - res.x[i]) <= 1e-6 * width[i])
    return FitResult(mle=mle, loglik=-res.fun, iterations=res.nfev, converged=res.converged,
                     on_bound=hit, pd_failures=pd_failures, message=res.message, trace=trace)
