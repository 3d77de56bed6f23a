"""Bound-constrained derivative-free minimization by quadratic interpolation.

A trust-region method in the style of Powell's BOBYQA: a quadratic model is
kept interpolating f at m = 2n + 1 points, each update changes the model
Hessian by the least Frobenius norm compatible with the interpolation
conditions, and points are replaced using Lagrange-function values so the
interpolation set stays well poised.  Variables are scaled linearly so the
box becomes [0, 1]^n.

An evaluation returning +inf (or nan) marks an infeasible point: it is
counted but never enters the interpolation set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    message: str
    infeasible: int = 0
    history: list = field(default_factory=list)


class _Budget(Exception):
    pass


class _Problem:
    def __init__(self, fun, lower, upper, maxfun, keep_history):
        self.fun = fun
        self.lower = np.asarray(lower, dtype=float)
        self.width = np.asarray(upper, dtype=float) - self.lower
        self.maxfun = maxfun
        self.nfev = 0
        self.infeasible = 0
        self.keep = keep_history
        self.history = []

    def to_x(self, u):
        return self.lower + np.clip(u, 0.0, 1.0) * self.width

    def __call__(self, u):
        if self.nfev >= self.maxfun:
            raise _Budget
        self.nfev += 1
        x = self.to_x(u)
        f = float(self.fun(x))
        if not math.isfinite(f):
            self.infeasible += 1
            f = math.inf
        if self.keep:
            self.history.append((x.copy(), f))
        return f


def _kkt_model(S, r, H_prev):
    """Least-Frobenius-change quadratic through the shifted points S.

    Returns (c, g, H, W) where W is the (scaled) KKT matrix, needed for
    Lagrange-function values.
    """
    m, n = S.shape
    scale = max(np.max(np.linalg.norm(S, axis=1)), 1e-300)
    St = S / scale
    rr = r - 0.5 * np.einsum("ij,jk,ik->i", S, H_prev, S)
    A = 0.5 * (St @ St.T) ** 2
    W = np.zeros((m + n + 1, m + n + 1))
    W[:m, :m] = A
    W[:m, m] = 1.0
    W[m, :m] = 1.0
    W[:m, m + 1:] = St
    W[m + 1:, :m] = St.T
    rhs = np.zeros(m + n + 1)
    rhs[:m] = rr
    try:
        sol = np.linalg.solve(W, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(W, rhs, rcond=None)[0]
    lam, c, gt = sol[:m], sol[m], sol[m + 1:]
    H = H_prev + (St.T * lam) @ St / scale ** 2
    return c, gt / scale, 0.5 * (H + H.T), W, St, scale


def _lagrange_values(W, St, scale, s):
    """Values of all Lagrange functions at shifted point s."""
    m = St.shape[0]
    st = s / scale
    psi = np.concatenate([0.5 * (St @ st) ** 2, [1.0], st])
    try:
        return np.linalg.solve(W, psi)[:m]
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(W, psi, rcond=None)[0][:m]


def _trsbox(g, H, xc, delta):
    """Approximately minimize g.d + d.H.d/2 over |d| <= delta, 0 <= xc + d <= 1.

    Truncated conjugate gradients with an active set: a variable that hits a
    bound is fixed there and CG restarts on the rest.
    """
    n = g.size
    d = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    tiny = 1e-14
    for _ in range(2 * n + 1):
        grad = g + H @ d
        x = xc + d
        fixed |= ((x <= tiny) & (grad > 0)) | ((x >= 1.0 - tiny) & (grad < 0))
        free = ~fixed
        if not free.any():
            break
        r = -grad * free
        if np.linalg.norm(r) < 1e-14:
            break
        p = r.copy()
        hit_bound = False
        for _ in range(int(free.sum())):
            Hp = H @ p
            curv = float(p @ Hp)
            rr = float(r @ r)
            # largest t with |d + t p| <= delta
            pp, dp, dd = p @ p, d @ p, d @ d
            disc = max(dp * dp + pp * (delta * delta - dd), 0.0)
            t_tr = (-dp + math.sqrt(disc)) / pp
            t_b = math.inf
            ib = -1
            x = xc + d
            for i in np.nonzero(free & (p != 0))[0]:
                ti = ((1.0 if p[i] > 0 else 0.0) - x[i]) / p[i]
                if ti < t_b:
                    t_b, ib = max(ti, 0.0), i
            t_cg = rr / curv if curv > 0 else math.inf
            t = min(t_cg, t_tr, t_b)
            d = d + t * p
            if t == t_tr:
                return d
            if t == t_b:
                d[ib] = (1.0 if p[ib] > 0 else 0.0) - xc[ib]
                fixed[ib] = True
                hit_bound = True
                break
            r_new = (r - t * Hp) * free
            if np.linalg.norm(r_new) < 1e-12 * max(1.0, np.linalg.norm(g)):
                return d
            p = r_new + (float(r_new @ r_new) / rr) * p
            r = r_new
        if not hit_bound:
            break
    return d


def _geometry_step(W, St, scale, S, t, xc, radius):
    """Trial step (from xc) making Lagrange function t large in magnitude."""
    m, n = S.shape
    cands = []
    for j in range(m):
        v = S[j]
        nv = np.linalg.norm(v)
        if nv > 0:
            cands += [radius * v / nv, -radius * v / nv]
    eps = 1e-7 * radius
    grad = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        grad[i] = (_lagrange_values(W, St, scale, e)[t]
                   - _lagrange_values(W, St, scale, -e)[t]) / (2 * eps)
    if np.linalg.norm(grad) > 0:
        gdir = grad / np.linalg.norm(grad)
        cands += [radius * gdir, -radius * gdir]
    for i in range(n):
        e = np.zeros(n)
        e[i] = radius
        cands += [e, -e]
    best, best_val = None, -1.0
    for d in cands:
        d = np.clip(xc + d, 0.0, 1.0) - xc
        if np.linalg.norm(d) < 1e-3 * radius:
            continue
        if np.min(np.linalg.norm(S - d, axis=1)) < 1e-3 * radius:
            continue
        val = abs(_lagrange_values(W, St, scale, d)[t])
        if val > best_val:
            best, best_val = d, val
    return best


def minimize_bobyqa(fun, x0, lower, upper, *, rhobeg=0.1, rhoend=1e-8, ftol_rel=1e-5,
                    maxfun=5000, keep_history=False) -> OptimizeResult:
    """Minimize ``fun`` over the box [lower, upper] without derivatives.

    ``rhobeg``/``rhoend`` are trust-region radii in the unit-scaled box.
    The trust-region radius rho shrinks through resolution levels.  The
    search stops when a level after the first lowers the best value by less
    than ``ftol_rel * |f|``, when rho reaches ``rhoend``, or after
    ``maxfun`` evaluations (not converged).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise ValueError("each upper bound must exceed its lower bound")
    n = lower.size
    prob = _Problem(fun, lower, upper, maxfun, keep_history)
    u0 = np.clip((np.asarray(x0, dtype=float) - lower) / prob.width, 0.0, 1.0)
    rhobeg = min(rhobeg, 0.25)

    def finish(pts, fv, kopt, ok, msg):
        return OptimizeResult(prob.to_x(pts[kopt]), float(fv[kopt]), prob.nfev, ok, msg,
                              prob.infeasible, prob.history)

    try:
        f0 = prob(u0)
        if not math.isfinite(f0):
            raise ValueError("objective is infeasible at the starting point")
        pts = [u0]
        fv = [f0]
        for i in range(n):
            if u0[i] - rhobeg >= 0.0 and u0[i] + rhobeg <= 1.0:
                steps = (rhobeg, -rhobeg)
            elif u0[i] + 2.0 * rhobeg <= 1.0:
                steps = (rhobeg, 2.0 * rhobeg)
            else:
                steps = (-rhobeg, -2.0 * rhobeg)
            for step in steps:
                for _ in range(12):
                    u = u0.copy()
                    u[i] = u0[i] + step
                    f = prob(u)
                    if math.isfinite(f):
                        break
                    # infeasible: pull the point halfway back towards the start
                    step *= 0.5
                pts.append(u)
                fv.append(f if math.isfinite(f) else f0)
        pts = np.array(pts)
        fv = np.array(fv)
    except _Budget:
        return OptimizeResult(prob.to_x(u0), math.inf, prob.nfev, False, "evaluation budget exhausted",
                              prob.infeasible, prob.history)

    m = pts.shape[0]
    kopt = int(np.argmin(fv))
    H = np.zeros((n, n))
    rho = rhobeg
    delta = rhobeg
    level_start = fv[kopt]
    try:
        while True:
            xc = pts[kopt]
            S = pts - xc
            c, g, H, W, St, scale = _kkt_model(S, fv - fv[kopt], H)
            d = _trsbox(g, H, xc, delta)
            dnorm = float(np.linalg.norm(d))
            dist = np.linalg.norm(S, axis=1)
            if dnorm < 0.5 * rho:
                kfar = int(np.argmax(dist))
                # a point that cannot be placed (every candidate clipped onto the
                # sample) must not stall the loop; fall through to the next level
                if dist[kfar] > 2.0 * rho and _improve_geometry(prob, pts, fv, W, St, scale, S,
                                                                 kfar, xc, rho):
                    kopt = int(np.argmin(fv))
                    continue
                stop = _stop_reason(rho, rhobeg, rhoend, ftol_rel, level_start, fv[kopt])
                if stop:
                    return finish(pts, fv, kopt, True, stop)
                rho, delta = _next_level(rho, rhoend)
                level_start = fv[kopt]
                continue
            fnew = prob(xc + d)
            pred = -(g @ d + 0.5 * d @ H @ d)
            ratio = (fv[kopt] - fnew) / pred if pred > 0 else -1.0
            if not math.isfinite(fnew):
                ratio = -1.0
            if ratio <= 0.1:
                delta = min(0.5 * delta, dnorm)
            elif ratio <= 0.7:
                delta = max(0.5 * delta, dnorm)
            else:
                delta = max(0.5 * delta, 2.0 * dnorm)
            if delta <= 1.5 * rho:
                delta = rho
            if math.isfinite(fnew):
                lag = np.abs(_lagrange_values(W, St, scale, d))
                score = lag * np.maximum(1.0, (dist / delta) ** 2)
                if fnew >= fv[kopt]:
                    score[kopt] = -1.0
                knew = int(np.argmax(score))
                pts[knew] = xc + d
                fv[knew] = fnew
                kopt = int(np.argmin(fv))
            if ratio < 0.1:
                S = pts - pts[kopt]
                dist = np.linalg.norm(S, axis=1)
                kfar = int(np.argmax(dist))
                if dist[kfar] > 2.0 * delta:
                    c, g, H, W, St, scale = _kkt_model(S, fv - fv[kopt], H)
                    _improve_geometry(prob, pts, fv, W, St, scale, S, kfar, pts[kopt],
                                      max(0.1 * delta, rho))
                    kopt = int(np.argmin(fv))
                elif delta <= rho and dnorm <= 2.0 * rho:
                    stop = _stop_reason(rho, rhobeg, rhoend, ftol_rel, level_start, fv[kopt])
                    if stop:
                        return finish(pts, fv, kopt, True, stop)
                    rho, delta = _next_level(rho, rhoend)
                    level_start = fv[kopt]
    except _Budget:
        kopt = int(np.argmin(fv))
        return finish(pts, fv, kopt, False, "evaluation budget exhausted")


def _improve_geometry(prob, pts, fv, W, St, scale, S, t, xc, radius):
    """Replace point ``t`` by a well-poised one; False when no candidate exists."""
    d = _geometry_step(W, St, scale, S, t, xc, radius)
    if d is None:
        return False
    f = prob(xc + d)
    if math.isfinite(f):
        pts[t] = xc + d
        fv[t] = f
    return True


def _stop_reason(rho, rhobeg, rhoend, ftol_rel, level_start, fbest):
    if rho <= rhoend:
        return "trust region reached its final radius"
    # the first level is exploratory; afterwards a level that barely moves f ends the search
    if rho < rhobeg and level_start - fbest <= ftol_rel * abs(fbest):
        return "relative objective change below tolerance"
    return ""


def _next_level(rho, rhoend):
    if rho > 250.0 * rhoend:
        new = 0.1 * rho
    elif rho > 16.0 * rhoend:
        new = math.sqrt(rho * rhoend)
    else:
        new = rhoend
    return new, max(0.5 * rho, new)


def minimize_nelder_mead(fun, x0, lower, upper, *, ftol_rel=1e-5, maxfun=5000,
                         keep_history=False) -> OptimizeResult:
    """Bounded Nelder-Mead (scipy) on the same scaled box, for cross-checks."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    prob = _Problem(fun, lower, upper, maxfun, keep_history)
    u0 = np.clip((np.asarray(x0, dtype=float) - lower) / prob.width, 0.0, 1.0)

    def wrapped(u):
        try:
            f = prob(u)
        except _Budget:
            return 1e300
        return f if math.isfinite(f) else 1e300

    # scipy's fatol is absolute; scale the relative tolerance by |f| at the start
    fatol = ftol_rel * max(1.0, abs(wrapped(u0)))
    res = sopt.minimize(wrapped, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * lower.size,
                        options={"fatol": fatol, "xatol": 1e-8, "maxfev": maxfun,
                                 "adaptive": True})
    ok = bool(res.success) and prob.nfev < maxfun
    return OptimizeResult(prob.to_x(res.x), float(res.fun), prob.nfev, ok, str(res.message),
                          prob.infeasible, prob.history)
