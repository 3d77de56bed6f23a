"""Synthetic fields and replicate studies.

Random numbers come from numpy's Philox counter-based generator.  Every
replicate owns an independent substream spawned from the master seed via
``SeedSequence.spawn``, so results do not depend on execution order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .covmat import LocationSet, assemble

KINDS = ("regular", "perturbed")


def rng_from(seed) -> np.random.Generator:
    """Philox generator from an int, a SeedSequence, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class GridSpec:
    n: int
    kind: str = "perturbed"
    delta: float = 1.0
    seed: int | None = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"grid kind must be one of {KINDS}")
        if self.n < 4:
            raise ValueError("need at least 4 locations")
        k = math.isqrt(self.n)
        if k * k != self.n:
            raise ValueError(f"n={self.n} is not a perfect square")
        if not self.delta > 0:
            raise ValueError("spacing factor must be positive")


def gen_locations(spec: GridSpec, seed=None) -> LocationSet:
    """Regular or jittered sqrt(n) x sqrt(n) grid in the unit square.

    Cell centres sit at (i - 0.5) / sqrt(n); the jittered grid shifts each
    coordinate independently by 0.5 * U(-0.4, 0.4) / sqrt(n).  Both
    coordinates are multiplied by the spacing factor ``delta``.
    """
    k = math.isqrt(spec.n)
    i, j = np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1), indexing="ij")
    xy = np.column_stack([i.ravel(), j.ravel()]).astype(float) - 0.5
    if spec.kind == "perturbed":
        rng = rng_from(spec.seed if seed is None else seed)
        xy = xy - 0.5 * rng.uniform(-0.4, 0.4, size=xy.shape)
    return LocationSet(spec.delta * xy / k)


def gen_field(locs: LocationSet, params, seed) -> np.ndarray:
    """Draw z = L w with L the lower Cholesky factor of the covariance."""
    L = assemble(locs, params).cholesky()
    w = rng_from(seed).standard_normal(locs.n)
    return L @ w


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def replicate_seeds(master_seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(count)


def sample_stats(values: np.ndarray) -> dict:
    """Per-column mean, sample variance (ddof=1) and interquartile range."""
    values = np.asarray(values, dtype=float)
    q1, q3 = np.percentile(values, [25, 75], axis=0)
    return {
        "mean": values.mean(axis=0),
        "sv": values.var(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1]),
        "iqr": q3 - q1,
    }


STRENGTH_RANGES = {"weak": 0.1, "medium": 0.3, "strong": 0.7}


def _as_tuple(v, cast):
    if isinstance(v, str):
        v = [s for s in (p.strip() for p in v.split(",")) if s]
    elif not isinstance(v, (list, tuple)):
        v = [v]
    return tuple(cast(x) for x in v)


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class StudyConfig:
    """Settings for a replicate study.

    Every replicate draws its own locations (unless ``share_locations``) and
    simulates a field from the unit-variance truth calibrated to the
    strength's effective range.  Each variant is fitted on all ``n``
    locations; prediction scores use that estimate to krige a random
    ``holdout`` fraction from the remaining locations.
    """

    variants: tuple = ("m1", "m2", "m3")
    strengths: tuple = ("weak", "medium", "strong")
    nus: tuple = (0.5,)
    nugget: bool = False
    nugget_value: float = 0.1
    n: int = 400
    replicates: int = 20
    seed: int = 0
    grid: str = "perturbed"
    delta: float = 1.0
    holdout: float = 0.2
    level: float = 0.05
    tol: float = 1e-5
    maxfun: int = 5000
    optimizer: str = "bobyqa"
    share_locations: bool = False
    fisher: bool = True
    tlr: bool = False
    eps: float = 1e-7
    nb: int = 50
    threads: int = 0

    _CASTS = {
        "variants": lambda v: _as_tuple(v, lambda s: str(s).lower()),
        "strengths": lambda v: _as_tuple(v, lambda s: str(s).lower()),
        "nus": lambda v: _as_tuple(v, float),
        "nugget": _as_bool, "share_locations": _as_bool, "fisher": _as_bool, "tlr": _as_bool,
        "nugget_value": float, "delta": float, "holdout": float, "level": float, "tol": float,
        "eps": float,
        "n": int, "replicates": int, "seed": int, "maxfun": int, "nb": int, "threads": int,
        "grid": str, "optimizer": str,
    }

    @classmethod
    def from_mapping(cls, m: dict) -> "StudyConfig":
        unknown = sorted(set(m) - set(cls._CASTS))
        if unknown:
            raise ValueError(f"unknown configuration key(s): {', '.join(unknown)}")
        kw = {}
        for k, v in m.items():
            try:
                kw[k] = cls._CASTS[k](v)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"bad value for {k}: {v!r} ({exc})") from None
        return cls(**kw)

    def __post_init__(self):
        from .matern import Variant
        for v in self.variants:
            Variant.parse(v)
        for s in self.strengths:
            if s not in STRENGTH_RANGES:
                raise ValueError(f"unknown field strength {s!r}")
        if not self.variants or not self.strengths or not self.nus:
            raise ValueError("variants, strengths and nus must be non-empty")
        if any(nu <= 0 for nu in self.nus):
            raise ValueError("smoothness values must be positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout fraction must lie in (0, 1)")
        if self.optimizer not in ("bobyqa", "nelder-mead"):
            raise ValueError("optimizer must be bobyqa or nelder-mead")
        GridSpec(self.n, self.grid, self.delta)
        n_test = int(round(self.holdout * self.n))
        if n_test < 1 or self.n - n_test < 2:
            raise ValueError("holdout leaves no training or test locations")


def truth_for(config: StudyConfig, strength: str, nu: float):
    from .matern import effective_range_solve
    tau2 = config.nugget_value if config.nugget else 0.0
    return effective_range_solve("m1", nu, STRENGTH_RANGES[strength], config.level, tau2)


def _replicate_data(config: StudyConfig, rep: int):
    """Locations, field seed and holdout split for one replicate."""
    children = np.random.SeedSequence(config.seed).spawn(config.replicates + 1)
    loc_ss, field_ss, split_ss = children[rep].spawn(3)
    if config.share_locations:
        loc_ss = children[-1]
    locs = gen_locations(GridSpec(config.n, config.grid, config.delta), seed=loc_ss)
    perm = rng_from(split_ss).permutation(config.n)
    n_test = int(round(config.holdout * config.n))
    return locs, field_ss, np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _run_job(args):
    config, strength, nu, rep = args
    from .likelihood import fit, scale_bounds
    from .matern import convert
    from .predict import aer, krige, mloe_mmom
    from .tlr import tlr_builder

    truth = truth_for(config, strength, nu)
    locs, field_ss, train, test = _replicate_data(config, rep)
    z = gen_field(locs, truth, field_ss)
    ltr, lte = locs.subset(train), locs.subset(test)
    builder = tlr_builder(config.nb, config.eps) if config.tlr else None
    out = []
    for v in config.variants:
        tv = convert(truth, v)
        rec = {"variant": v, "strength": strength, "nu": nu, "nugget": config.nugget,
               "replicate": rep}
        try:
            res = fit(locs, z, v, scale_bounds(tv), tol=config.tol, nugget=config.nugget,
                      fixed_nugget=0.0, maxfun=config.maxfun, optimizer=config.optimizer,
                      cov_builder=builder)
            est = res.mle
            pred = krige(ltr, z[train], lte, est, truth=z[test])
            eff = mloe_mmom(ltr, lte, tv, est)
            rec.update({f"est_{k}": val for k, val in zip("0123", est.values())})
            rec.update(loglik=res.loglik, iterations=res.iterations, converged=res.converged,
                       on_bound=";".join(res.on_bound), pd_failures=res.pd_failures,
                       mspe=pred.mspe, mloe=eff.mloe, mmom=eff.mmom,
                       aer=aer(est, STRENGTH_RANGES[strength]), error="")
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


@dataclass
class StudyResult:
    config: StudyConfig
    records: list
    tables: dict
    failures: int


def _records_for(records, key):
    return [r for r in records if (r["variant"], r["strength"], r["nu"]) == key and not r["error"]]


def _summarize(config: StudyConfig, records: list) -> dict:
    from .fisher import asymptotics, drv, fisher
    from .matern import convert, param_names
    from .predict import dr

    p = 4 if config.nugget else 3
    estimates, metrics, asym = [], [], []
    for strength in config.strengths:
        for nu in config.nus:
            truth = truth_for(config, strength, nu)
            fisher_locs = None
            if config.fisher:
                fisher_locs = _replicate_data(config, 0)[0]
            for v in config.variants:
                key = (v, strength, nu)
                rows = _records_for(records, key)
                failed = sum(1 for r in records
                             if (r["variant"], r["strength"], r["nu"]) == key and r["error"])
                tv = convert(truth, v)
                names = param_names(v)[:p]
                base = {"variant": v, "strength": strength, "nu": nu, "nugget": config.nugget}
                est = np.array([[r[f"est_{i}"] for i in "0123"[:p]] for r in rows]) \
                    if rows else np.empty((0, p))
                stats = sample_stats(est) if len(rows) else None
                for i, name in enumerate(names):
                    row = dict(base, parameter=name, truth=tv.values()[i], replicates=len(rows))
                    if stats is not None:
                        row.update(mean=float(stats["mean"][i]), median=float(np.median(est[:, i])),
                                   dr=dr(stats["mean"][i], tv.values()[i]),
                                   sv=float(stats["sv"][i]), iqr=float(stats["iqr"][i]))
                    estimates.append(row)
                m = dict(base, replicates=len(rows), failed=failed)
                for col in ("mspe", "mloe", "mmom", "aer", "iterations"):
                    vals = np.array([r[col] for r in rows], dtype=float)
                    m[f"{col}_median"] = float(np.median(vals)) if vals.size else float("nan")
                    m[f"{col}_mean"] = float(np.mean(vals)) if vals.size else float("nan")
                m["converged"] = sum(1 for r in rows if r["converged"])
                m["on_bound"] = sum(1 for r in rows if r["on_bound"])
                m["pd_failures"] = sum(int(r["pd_failures"]) for r in rows)
                metrics.append(m)
                if fisher_locs is not None:
                    rep = asymptotics(fisher(fisher_locs, tv, include_nugget=config.nugget))
                    for i, name in enumerate(names):
                        row = dict(base, parameter=name, tav=float(rep.tav[i]))
                        if stats is not None and len(rows) > 1:
                            row.update(sv=float(stats["sv"][i]),
                                       drv=float(drv(stats["sv"][i], rep.tav[i])))
                        asym.append(row)
    return {"estimates": estimates, "metrics": metrics, "asymptotics": asym}


def replicate_study(config: StudyConfig, threads: int | None = None, progress=None) -> StudyResult:
    """Run every (strength, nu, replicate) job and summarize per variant.

    Jobs run in a process pool of ``threads`` workers (default: the config
    value, or all available cores when that is 0).  Output ordering and
    values do not depend on the worker count.
    """
    jobs = [(config, s, nu, r) for s in config.strengths for nu in config.nus
            for r in range(config.replicates)]
    workers = threads or config.threads or default_workers()
    results = []
    if workers <= 1:
        for j in jobs:
            results.append(_run_job(j))
            if progress:
                progress(len(results), len(jobs))
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_job, jobs):
                results.append(res)
                if progress:
                    progress(len(results), len(jobs))
    records = [r for batch in results for r in batch]
    failures = sum(1 for r in records if r["error"])
    return StudyResult(config, records, _summarize(config, records), failures)
