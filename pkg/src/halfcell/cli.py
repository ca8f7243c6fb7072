"""Command-line front end: ``halfcell <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import DEFAULT_ALPHAS, DEFAULT_EPS, DEFAULT_HEIGHTS, SUSPECT, mu_limit
from .config import ConfigError, RunConfig, load_config, parse_override
from .correctors import (cell_correctors, effective_boundary, effective_interior, mu_bar_at,
                         second_corrector_and_Fbar)
from .errors import HalfcellError
from .grids import TorusGrid
from .halfspace import DEFAULT_RADII, slope_scan
from .homogenize import DEFAULT_EPS as HOMOGENIZE_EPS
from .homogenize import TwoScaleProblem, convergence_study
from .interior import DEFAULT_DELTAS, lambda_torus
from .model import Linear, Semilinear, audit_assumptions
from .montecarlo import lemma31_check, mu_mc_estimate

SUBCOMMANDS = ("lambda", "mu", "cell", "effective", "homogenize", "mc", "bavg", "audit")

__all__ = ["main", "run", "SUBCOMMANDS"]


class _Output:
    """Writes results into the output directory; CSV files get a metadata comment line."""

    def __init__(self, directory: Path, command: str):
        self.dir = directory
        self.command = command
        self.t0 = time.perf_counter()
        self.files = []

    def _header(self) -> str:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        return (f"# halfcell {__version__} {self.command} {stamp} "
                f"runtime={time.perf_counter() - self.t0:.3f}s\n")

    def json(self, name: str, payload: dict) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
        self.files.append(path)
        return path

    def csv(self, name: str, header: list, rows) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with path.open("w", newline="") as fh:
            fh.write(self._header())
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.files.append(path)
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _grid_rows(grid, values):
    for c, v in zip(grid.physical_coords(), np.ravel(values)):
        yield [float(t) for t in c] + [float(v)]


def _coord_names(d):
    return [f"y{k + 1}" for k in range(d)] + ["value"]


# -- subcommands ----------------------------------------------------------------------------


def _lambda(cfg: RunConfig, out: _Output):
    op = cfg.operator()
    d = cfg.dim
    grid = TorusGrid(d, cfg.integer("n_per", 64))
    sol = lambda_torus(op, grid, cfg.numbers("deltas", DEFAULT_DELTAS), x=cfg.vector("x"),
                       method=cfg.text("method"), drift=cfg.text("drift", "auto"))
    out.json("lambda.json", {"constant": sol.constant, "residual": sol.residual_sup,
                             "history": sol.as_dict()["history"], "n_per": cfg.integer("n_per", 64)})
    out.csv("lambda_corrector.csv", _coord_names(d), _grid_rows(grid, sol.corrector))
    return 0, f"lambda = {sol.constant:.10g} (residual {sol.residual_sup:.2e})"


def _mu_kwargs(cfg: RunConfig) -> dict:
    return {"n_per": cfg.integer("n_per", 64), "psi": cfg.psi(), "z_ratio": cfg.number("z_ratio", 1.0),
            "eps_schedule": cfg.numbers("eps_schedule", DEFAULT_EPS),
            "alpha_schedule": cfg.numbers("alpha_schedule", DEFAULT_ALPHAS),
            "heights": cfg.numbers("heights", DEFAULT_HEIGHTS),
            "extrap_tol": cfg.number("extrap_tol", 1e-4), "drift_tol": cfg.number("drift_tol", 1e-4),
            "method": cfg.text("method"), "drift": cfg.text("drift", "auto")}


def _mu(cfg: RunConfig, out: _Output):
    op, bop = cfg.operator(), cfg.boundary()
    p = cfg.vector("p")
    kw = _mu_kwargs(cfg)
    if np.any(p != 0):
        mu_bar, res = mu_bar_at(op, bop, p, cfg.vector("x"), **kw)
    else:
        res = mu_limit(op, bop, cfg.dim, x=cfg.vector("x"), **kw)
        mu_bar = -res.mu
    payload = res.as_dict()
    payload.update({"p": p, "mu_bar": mu_bar})
    out.json("mu.json", payload)
    out.csv("mu_history.csv", ["R", "alpha", "eps", "value"],
            ([h["R"], h["alpha"], h["eps"], h["value"]] for h in res.epsilon_history))
    summary = f"mu = {res.mu:.10g} [{res.uniqueness_flag}] R-drift {res.R_drift:.2e}"
    if res.uniqueness_flag == SUSPECT:
        out.json("mu_diagnostics.json", {"uniqueness_flag": res.uniqueness_flag,
                                         "R_drift": res.R_drift, "notes": res.notes})
        return 1, summary
    return 0, summary


def _cell_cmd(cfg: RunConfig, out: _Output):
    op = cfg.operator()
    d = cfg.dim
    grid = TorusGrid(d, cfg.integer("n_per", 64))
    p, M, x = cfg.vector("p"), cfg.matrix("M"), cfg.vector("x")
    cell = cell_correctors(op, grid, p, x)
    res = second_corrector_and_Fbar(op, M, p, grid, x, cell)
    out.json("cell.json", {"p": p, "M": M, "x": x, "first_cell_constant": cell.constant,
                           "F_bar": res["F_bar"], "residual": res["residual"]})
    out.csv("cell_corrector.csv", _coord_names(d), _grid_rows(grid, res["w"]))
    return 0, f"F_bar = {res['F_bar']:.10g}"


def _effective_data(cfg: RunConfig, n_per: int):
    op, bop = cfg.operator(), cfg.boundary()
    d = cfg.dim
    x = cfg.vector("x")
    strict = cfg.flag("strict", True)
    tol = cfg.number("affinity_tol", 1e-3)
    inner = effective_interior(op, TorusGrid(d, n_per), x, cfg.integer("audit_samples", 3),
                               cfg.integer("seed", 0), tol=tol, strict=strict)
    kw = _mu_kwargs(cfg)
    kw["n_per"] = n_per
    outer = effective_boundary(op, bop, x, cfg.integer("boundary_audit_samples", 2),
                               cfg.integer("seed", 0), tol=tol, strict=strict, **kw)
    return inner.merged(outer)


def _effective(cfg: RunConfig, out: _Output):
    eff = _effective_data(cfg, cfg.integer("n_per", 64))
    out.json("effective.json", eff.as_dict())
    if eff.gamma_bar is None:
        return 0, "effective data written"
    return 0, f"gamma_bar = {eff.gamma_bar}, g_bar = {eff.g_bar:.10g}"


def _homogenize(cfg: RunConfig, out: _Output):
    op, bop = cfg.operator(), cfg.boundary()
    n_fast = cfg.integer("n_fast", 32)
    problem = TwoScaleProblem(op, bop, cfg.psi(), cfg.number("tangential_period", None))
    reference = cfg.text("reference", "fine" if isinstance(op, Semilinear) else "effective")
    eff = None
    if reference == "effective":
        # effective data at the resolution of the fast cells of the eps-problems
        eff = _effective_data(cfg, n_fast)
    window = cfg.numbers("window", (0.0, 2.0))
    study = convergence_study(problem, eff, cfg.numbers("epsilons", HOMOGENIZE_EPS), tuple(window),
                              n_fast, cfg.number("R_lid", 4.0), reference,
                              cfg.number("reference_eps", 1 / 64),
                              cfg.number("effective_h", 1 / 1024), cfg.number("z_ratio", None))
    payload = study.as_dict()
    payload["effective"] = eff.as_dict() if eff is not None else None
    payload["ratio_last_first"] = study.errors[-1] / study.errors[0]
    out.json("homogenize.json", payload)
    # per-solve runtimes would break byte-identical reruns; the header line carries the total
    out.csv("homogenize.csv", ["epsilon", "error"], zip(study.epsilons, study.errors))
    out.dir.mkdir(parents=True, exist_ok=True)
    study.write_plot_data(out.dir / "homogenize.dat")
    out.files.append(out.dir / "homogenize.dat")
    code = 0 if study.nonincreasing else 1
    return code, "e(eps) = " + ", ".join(f"{e:.3e}" for e in study.errors)


def _mc(cfg: RunConfig, out: _Output):
    op, bop = cfg.operator(), cfg.boundary()
    if not isinstance(op, Linear):
        raise ConfigError("mc needs a linear operator")
    seed = cfg.integer("seed")
    dom = cfg.domain(cfg.number("mc_height", 100.0))
    x0 = cfg.vector("x0")
    lam = cfg.number("lam", None)
    if lam is None:
        lam = lambda_torus(op, TorusGrid(cfg.dim, cfg.integer("n_per", 64)), x=cfg.vector("x")).constant
    T, dt = cfg.number("T", 10.0), cfg.number("dt", 1e-2)
    paths = cfg.integer("paths", 10_000)
    est = mu_mc_estimate(op, bop, lam, dom, x0, T, paths, seed, dt, x=cfg.vector("x"))
    est["lambda"] = lam
    horizons = cfg.numbers("horizons", None)
    rows = []
    if horizons:
        check = lemma31_check(op, bop, dom, x0, horizons, dt, cfg.integer("growth_paths", 4096), seed,
                              cfg.number("threshold", 0.05), x=cfg.vector("x"))
        est["lemma31"] = check
        table = check["growth"][0]
        rows = list(zip(table["horizons"], table["mean_local_time"], table["std_error"]))
    out.json("mc.json", est)
    out.csv("mc_growth.csv", ["T", "mean_local_time", "std_error"], rows)
    return 0, f"mu_hat = {est['mu_hat']:.6g} +- {est['std_error']:.2g}"


def _bavg(cfg: RunConfig, out: _Output):
    g = cfg.text("g", None, "problem")
    if not g:
        raise ConfigError("bavg needs problem.g")
    scan = slope_scan(g, cfg.numbers("alphas", (0.0, 0.2, 0.1, 0.05)),
                      cfg.numbers("radii", DEFAULT_RADII), cfg.integer("nodes_per_unit", 32))
    out.json("bavg.json", scan.as_dict())
    out.csv("bavg.csv", ["alpha", "R", "average"], scan.rows())
    return 0, f"mu(e2) = {scan.mu_normal:.6g}, tilted limit {scan.mu_limit:.6g}, gap {scan.gap:.6g}"


def _audit(cfg: RunConfig, out: _Output):
    op, bop = cfg.operator(), cfg.boundary()
    report = audit_assumptions(op, bop, cfg.domain(), cfg.integer("probes", 64), cfg.integer("seed", 0),
                               cfg.vector("x"))
    out.json("audit.json", {"passed": report.passed, "items": report.as_dict()})
    failed = [k for k, v in report.items.items() if not v.passed]
    return 0, "audit passed" if report.passed else f"audit failed: {', '.join(failed)}"


HANDLERS = {"lambda": _lambda, "mu": _mu, "cell": _cell_cmd, "effective": _effective,
            "homogenize": _homogenize, "mc": _mc, "bavg": _bavg, "audit": _audit}


def run(subcommand: str, config_path, out_dir=None, seed=None, overrides=(), quiet=False) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        if subcommand not in HANDLERS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        triples = [parse_override(o) for o in overrides]
        if seed is not None:
            triples.append(("numerics", "seed", str(seed)))
        cfg = load_config(config_path, triples).validate(subcommand)
        directory = Path(out_dir or cfg.text("dir", "results", "output"))
    except ConfigError as exc:
        print(f"halfcell: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = _Output(directory, subcommand)
    try:
        code, summary = HANDLERS[subcommand](cfg, out)
    except ConfigError as exc:
        print(f"halfcell: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except HalfcellError as exc:
        out.json(f"{subcommand}_diagnostics.json", {"error": type(exc).__name__, "message": str(exc)})
        if not quiet:
            print(f"{subcommand}: failed: {type(exc).__name__}: {exc}")
        return 1
    except (ValueError, TypeError) as exc:
        print(f"halfcell: invalid configuration: {exc}", file=sys.stderr)
        return 2
    if not quiet:
        print(f"{subcommand}: {summary}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halfcell", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config_file", nargs="?", help="configuration file")
        sp.add_argument("--config", dest="config", help="configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    path = args.config or args.config_file
    if path is None:
        print("halfcell: a configuration file is required", file=sys.stderr)
        return 2
    return run(args.command, path, args.out, args.seed, args.override, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
