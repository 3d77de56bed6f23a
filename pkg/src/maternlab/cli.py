"""Command-line entry point.

Tables are CSV preceded by a ``# schema_version=1`` line; fit records are
JSON lines.  Exit status is 0 on success, 2 for usage or input errors and 1
for numerical failures, with a JSON object ``{"error": code, "message": ...}``
written to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import covmat, fisher as fisher_mod, likelihood, matern, predict as predict_mod, sim
from . import tlr as tlr_mod

SCHEMA_VERSION = 1
SCHEMA_LINE = f"# schema_version={SCHEMA_VERSION}"


class CliError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def usage_error(code, message):
    return CliError(2, code, message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise usage_error("usage", f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """Validated settings shared by the subcommands."""

    command: str
    seed: int = 0
    out: str | None = None
    variant: matern.Variant | None = None
    nugget: bool = False
    tlr: bool = False
    eps: float = tlr_mod.DEFAULT_EPS
    nb: int = covmat.DEFAULT_NB
    threads: int = 0

    @classmethod
    def from_args(cls, ns) -> "RunConfig":
        variant = getattr(ns, "variant", None)
        try:
            variant = None if variant is None else matern.Variant.parse(variant)
        except ValueError as exc:
            raise usage_error("bad_variant", str(exc)) from None
        cfg = cls(ns.command, getattr(ns, "seed", 0), getattr(ns, "out", None), variant,
                  bool(getattr(ns, "nugget", False)), bool(getattr(ns, "tlr", False)),
                  getattr(ns, "eps", tlr_mod.DEFAULT_EPS), getattr(ns, "nb", covmat.DEFAULT_NB),
                  getattr(ns, "threads", 0) or 0)
        if not cfg.eps > 0:
            raise usage_error("bad_option", "--eps must be positive")
        if cfg.nb < 1:
            raise usage_error("bad_option", "--nb must be a positive integer")
        if cfg.threads < 0:
            raise usage_error("bad_option", "--threads must be non-negative")
        return cfg


# input helpers

def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise usage_error("bad_option", f"{what}: expected comma-separated numbers, got {text!r}") \
            from None


def _params(variant, text: str, what="--params"):
    vals = _floats(text, what)
    try:
        return matern.make_params(variant, vals)
    except (TypeError, ValueError) as exc:
        raise usage_error("bad_params", f"{what}: {exc}") from None


def _grid_values(text: str, what: str) -> list[float]:
    """Comma list, or start:stop:step inclusive of stop."""
    if text.count(":") == 2:
        a, b, s = _floats(text.replace(":", ","), what)
        if s <= 0 or b < a:
            raise usage_error("bad_option", f"{what}: bad range {text!r}")
        k = int(math.floor((b - a) / s + 1e-9))
        return [a + i * s for i in range(k + 1)]
    return _floats(text, what)


def read_data(path: str, need_z: bool = True, rescale: bool = False):
    """Read an ``x,y,z`` CSV; lines starting with '#' are ignored."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise usage_error("missing_file", f"cannot read {path}: {exc.strerror}") from None
    reader = csv.DictReader(lines)
    fields = [f.strip() for f in (reader.fieldnames or [])]
    reader.fieldnames = fields
    required = ("x", "y", "z") if need_z else ("x", "y")
    missing = [c for c in required if c not in fields]
    if missing:
        raise usage_error("bad_header", f"{path}: missing column(s) {', '.join(missing)}")
    has_z = "z" in fields
    xy, z = [], []
    for row_no, row in enumerate(reader, start=1):
        for col in ("x", "y", "z") if has_z else ("x", "y"):
            try:
                v = float(row[col])
            except (TypeError, ValueError):
                raise usage_error("invalid_data",
                                  f"{path}: data row {row_no}: non-numeric {col} value "
                                  f"{row[col]!r}") from None
            if not math.isfinite(v):
                raise usage_error("invalid_data", f"{path}: data row {row_no}: {col} is not finite")
            (z if col == "z" else xy).append(v)
    if not xy:
        raise usage_error("invalid_data", f"{path}: no data rows")
    coords = np.array(xy).reshape(-1, 2)
    if rescale:
        lo = coords.min(axis=0)
        span = float(np.max(coords.max(axis=0) - lo))
        coords = (coords - lo) / (span if span > 0 else 1.0)
    return coords, (np.array(z) if has_z else None)


class _Output:
    """Serialized writer to a file or stdout."""

    def __init__(self, path: str | None):
        self.path = path
        self.buf = io.StringIO()

    def table(self, header, rows):
        w = csv.writer(self.buf, lineterminator="\n")
        self.buf.write(SCHEMA_LINE + "\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])

    def line(self, text):
        self.buf.write(text + "\n")

    def close(self):
        if self.path:
            with open(self.path, "w") as fh:
                fh.write(self.buf.getvalue())
        else:
            sys.stdout.write(self.buf.getvalue())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table(path: str, header, rows):
    out = _Output(path)
    out.table(header, rows)
    out.close()


def _locations_from(ns, seed_ss):
    try:
        spec = sim.GridSpec(ns.n, ns.grid, ns.delta)
    except ValueError as exc:
        raise usage_error("bad_option", str(exc)) from None
    return sim.gen_locations(spec, seed=seed_ss)


# subcommands

def cmd_simulate(ns, cfg: RunConfig):
    params = _params(cfg.variant, ns.params)
    loc_ss, field_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    locs = _locations_from(ns, loc_ss)
    z = sim.gen_field(locs, params, field_ss)
    rows = [(x, y, v) for (x, y), v in zip(locs.coords, z)]
    write_table(cfg.out, ("x", "y", "z"), rows)
    if ns.dump_cov:
        a = covmat.assemble(locs, params).data
        write_table(ns.dump_cov, [f"c{j}" for j in range(locs.n)], a.tolist())


def _parse_bounds(text: str, p: int, variant, coords, z):
    if text == "auto":
        return _auto_bounds(variant, coords, z, p)
    parts = [t for t in text.split(",") if t.strip()]
    lo, hi = [], []
    for t in parts:
        if ":" not in t:
            raise usage_error("bad_bounds", f"--bounds entry {t!r} is not lo:hi")
        a, b = _floats(t.replace(":", ","), "--bounds")
        lo.append(a)
        hi.append(b)
    if len(lo) != p:
        raise usage_error("bad_bounds", f"--bounds needs {p} lo:hi entries, got {len(lo)}")
    try:
        return likelihood.Bounds(np.array(lo), np.array(hi))
    except ValueError as exc:
        raise usage_error("bad_bounds", str(exc)) from None


def _auto_bounds(variant, coords, z, p):
    """Data-driven guess (sample variance, a range of a tenth of the diameter,
    exponential smoothness) scaled into a search box."""
    span = float(np.max(np.ptp(coords, axis=0))) or 1.0
    var = float(np.var(z)) or 1.0
    guess = matern.convert(matern.M1(var, 0.1 * span, 0.5, 0.1 * var), variant)
    return likelihood.scale_bounds(guess).head(p)


def cmd_estimate(ns, cfg: RunConfig):
    coords, z = read_data(ns.data, need_z=True, rescale=ns.rescale)
    locs = covmat.LocationSet(coords, nb=cfg.nb)
    p = 4 if cfg.nugget else 3
    bounds = _parse_bounds(ns.bounds, p, cfg.variant, coords, z)
    builder = tlr_mod.tlr_builder(cfg.nb, cfg.eps) if cfg.tlr else None
    res = likelihood.fit(locs, z, cfg.variant, bounds, tol=ns.tol, nugget=cfg.nugget,
                         maxfun=ns.maxfun, optimizer=ns.optimizer, cov_builder=builder)
    names = matern.param_names(cfg.variant)
    rec = {
        "variant": cfg.variant.value, "n": locs.n, "nugget": cfg.nugget, "seed": cfg.seed,
        "params": dict(zip(names, res.mle.values())),
        "loglik": res.loglik, "iterations": res.iterations, "converged": res.converged,
        "on_bound": list(res.on_bound), "pd_failures": res.pd_failures, "message": res.message,
        "bounds": {"lower": bounds.lower.tolist(), "upper": bounds.upper.tolist()},
    }
    if cfg.tlr:
        rec["tlr"] = {"eps": cfg.eps, "nb": cfg.nb}
    out = _Output(cfg.out)
    out.line(json.dumps(rec))
    out.close()
    if not math.isfinite(res.loglik):
        raise CliError(1, "not_positive_definite", "no positive definite covariance was found")
    if ns.tlr_report:
        cov = covmat.assemble(locs, res.mle)
        t = tlr_mod.compress(cov, cfg.nb, cfg.eps)
        rows = [tuple(r.values()) for r in tlr_mod.report_rows(t)]
        rep = _Output(ns.tlr_report)
        rep.table(("tile_row", "tile_col", "rows", "cols", "rank", "error", "tile_norm",
                   "stored"), rows)
        rep.line(f"# stored_scalars={t.stored_scalars()} dense_scalars={t.dense_scalars()}")
        rep.close()
    if not res.converged:
        raise CliError(1, "convergence_cap", res.message or "evaluation budget exhausted")


def cmd_fisher(ns, cfg: RunConfig):
    params = _params(cfg.variant, ns.params)
    locs = _locations_from(ns, np.random.SeedSequence(cfg.seed))
    fim = fisher_mod.fisher(locs, params, include_nugget=cfg.nugget)
    rep = fisher_mod.asymptotics(fim)
    names = fim.names
    rows = []
    for qty, m in (("information", fim.matrix), ("inverse", rep.inverse),
                   ("correlation", rep.corr)):
        for i in range(fim.p):
            for j in range(fim.p):
                rows.append((qty, names[i], names[j], m[i, j]))
    rows += [("tav", nm, nm, v) for nm, v in zip(names, rep.tav)]
    write_table(cfg.out, ("quantity", "row", "col", "value"), rows)
    if not rep.ok:
        raise CliError(1, "singular_information",
                       f"information matrix is numerically singular (condition {rep.condition:.3g})")


def cmd_predict(ns, cfg: RunConfig):
    params = _params(cfg.variant, ns.params)
    tc, tz = read_data(ns.train, need_z=True)
    sc, sz = read_data(ns.test, need_z=False)
    rep = predict_mod.krige(covmat.LocationSet(tc), tz, covmat.LocationSet(sc), params, truth=sz)
    out = _Output(cfg.out)
    if sz is None:
        out.table(("x", "y", "predicted", "variance"),
                  [(x, y, p, v) for (x, y), p, v in zip(sc, rep.predicted, rep.variance)])
    else:
        out.table(("x", "y", "predicted", "variance", "observed"),
                  [(x, y, p, v, o) for (x, y), p, v, o in
                   zip(sc, rep.predicted, rep.variance, sz)])
        out.line(f"# mspe={rep.mspe!r}")
    out.close()


def cmd_mloe_mmom(ns, cfg: RunConfig):
    truth = _params(cfg.variant, ns.true_params, "--true-params")
    est = _params(ns.est_variant or cfg.variant, ns.est_params, "--est-params")
    tc, _ = read_data(ns.train, need_z=False)
    sc, _ = read_data(ns.test, need_z=False)
    rep = predict_mod.mloe_mmom(covmat.LocationSet(tc), covmat.LocationSet(sc), truth, est)
    out = _Output(cfg.out)
    out.table(("x", "y", "loe", "mom"),
              [(x, y, a, b) for (x, y), a, b in zip(sc, rep.loe, rep.mom)])
    out.line(f"# mloe={rep.mloe!r} mmom={rep.mmom!r}")
    out.close()


def cmd_bessel_deriv(ns, cfg: RunConfig):
    from .specialfn import DerivMethod, bessel_k_dnu
    nus = _grid_values(ns.nu_grid, "--nu-grid")
    xs = _grid_values(ns.x, "--x")
    try:
        methods = [DerivMethod(m.strip().lower()) for m in ns.methods.split(",") if m.strip()]
    except ValueError as exc:
        raise usage_error("bad_option", f"--methods: {exc}") from None
    rows = []
    for nu in nus:
        for x in xs:
            for m in methods:
                if m is DerivMethod.EXACT and not (nu > 0 and float(nu).is_integer()):
                    continue
                if m is DerivMethod.ASYM and nu <= 0:
                    continue
                try:
                    rows.append((nu, x, m.value, bessel_k_dnu(nu, x, m)))
                except ValueError as exc:
                    raise usage_error("bad_option", f"nu={nu}, x={x}: {exc}") from None
    write_table(cfg.out, ("nu", "x", "method", "value"), rows)


def cmd_convert(ns, cfg: RunConfig):
    src = _params(ns.source, ns.params)
    try:
        dst = matern.convert(src, ns.target)
    except ValueError as exc:
        raise usage_error("bad_variant", str(exc)) from None
    vals = dst.values()
    if ns.digits is not None:
        vals = [f"{v:.{ns.digits}f}" for v in vals]
    write_table(cfg.out, ("variant",) + matern.param_names(dst.variant),
                [(dst.variant.value, *vals)])


def load_study_config(path: str) -> sim.StudyConfig:
    """Flat ``key = value`` file; '#' starts a comment; lists are comma-separated."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise usage_error("missing_file", f"cannot read config {path}: {exc.strerror}") from None
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string("[study]\n" + text, source=path)
    except configparser.Error as exc:
        raise usage_error("bad_config", f"{path}: {exc}") from None
    try:
        return sim.StudyConfig.from_mapping(dict(cp["study"]))
    except ValueError as exc:
        raise usage_error("bad_config", f"{path}: {exc}") from None


def cmd_benchmark(ns, cfg: RunConfig):
    config = load_study_config(ns.config)
    if ns.full_scale:
        from dataclasses import replace
        config = replace(config, n=1600, replicates=300)
    os.makedirs(ns.out, exist_ok=True)

    def progress(done, total):
        if ns.verbose:
            print(f"{done}/{total} jobs", file=sys.stderr)

    result = sim.replicate_study(config, threads=cfg.threads or None, progress=progress)
    for name, rows in result.tables.items():
        if rows:
            header = list(dict.fromkeys(k for r in rows for k in r))
            write_table(os.path.join(ns.out, f"{name}.csv"), header,
                        [[r.get(k, "") for k in header] for r in rows])
    with open(os.path.join(ns.out, "records.jsonl"), "w") as fh:
        for r in result.records:
            fh.write(json.dumps(r, default=float) + "\n")
    if result.failures:
        print(json.dumps({"warning": "failed_fits", "count": result.failures}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="maternlab", description="Matern parameterization toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, variant=True, out=True):
        if variant:
            p.add_argument("--variant", required=True, help="m1, m2 or m3")
        if out:
            p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--seed", type=int, default=0)

    def grid(p):
        p.add_argument("--n", type=int, default=400)
        p.add_argument("--grid", choices=sim.KINDS, default="perturbed")
        p.add_argument("--delta", type=float, default=1.0)

    p = sub.add_parser("simulate", help="draw a field on a grid, write x,y,z CSV")
    common(p)
    grid(p)
    p.add_argument("--params", required=True)
    p.add_argument("--dump-cov", help="also write the covariance matrix as CSV")

    p = sub.add_parser("estimate", help="maximum-likelihood fit of an x,y,z CSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--nugget", action="store_true")
    p.add_argument("--bounds", default="auto", help="auto or lo:hi,lo:hi,...")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--maxfun", type=int, default=5000)
    p.add_argument("--optimizer", choices=("bobyqa", "nelder-mead"), default="bobyqa")
    p.add_argument("--rescale", action="store_true", help="map coordinates into the unit square")
    p.add_argument("--tlr", action="store_true")
    p.add_argument("--eps", type=float, default=tlr_mod.DEFAULT_EPS)
    p.add_argument("--nb", type=int, default=covmat.DEFAULT_NB)
    p.add_argument("--tlr-report", help="write the tile compression report at the estimate")

    p = sub.add_parser("fisher", help="Fisher information and asymptotic variances")
    common(p)
    grid(p)
    p.add_argument("--params", required=True)
    p.add_argument("--nugget", action="store_true")

    p = sub.add_parser("predict", help="kriging predictions for test locations")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--params", required=True)

    p = sub.add_parser("mloe-mmom", help="prediction efficiency of estimated parameters")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--true-params", required=True)
    p.add_argument("--est-params", required=True)
    p.add_argument("--est-variant", help="variant of --est-params (default --variant)")

    p = sub.add_parser("bessel-deriv", help="order derivative of K_nu by several methods")
    common(p, variant=False)
    p.add_argument("--nu-grid", required=True, help="list or start:stop:step")
    p.add_argument("--x", required=True, help="list or start:stop:step")
    p.add_argument("--methods", default="fd,intg,exact,asym")

    p = sub.add_parser("convert", help="map parameters between variants")
    common(p, variant=False)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--to", dest="target", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--digits", type=int)

    p = sub.add_parser("benchmark", help="replicate study from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=0, help="worker processes (0 = all cores)")
    p.add_argument("--full-scale", action="store_true", help="n=1600 with 300 replicates")
    p.add_argument("--verbose", action="store_true")
    return ap


COMMANDS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "fisher": cmd_fisher,
    "predict": cmd_predict, "mloe-mmom": cmd_mloe_mmom, "bessel-deriv": cmd_bessel_deriv,
    "convert": cmd_convert, "benchmark": cmd_benchmark,
}


def run(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = RunConfig.from_args(ns)
        for opt in ("source", "target"):
            if getattr(ns, opt, None) is not None:
                try:
                    matern.Variant.parse(getattr(ns, opt))
                except ValueError as exc:
                    raise usage_error("bad_variant", str(exc)) from None
        COMMANDS[ns.command](ns, cfg)
    except CliError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.status
    except covmat.NotPositiveDefiniteError as exc:
        print(json.dumps({"error": "not_positive_definite", "message": str(exc)}), file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(json.dumps({"error": "linear_algebra", "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
