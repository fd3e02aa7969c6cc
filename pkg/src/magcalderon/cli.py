"""Command-line driver: assemble, forward, dtn, invert, study, verify.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Output
goes to ``$MAGCALDERON_OUTPUT/<run.name>`` (or ``run.output`` from the
configuration, or ``--out``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import experiments as ex
from .config import (DEFAULTS, ConfigError, RunConfig, file_hash, solution_header, solution_rows,
                     write_csv, write_manifest)
from .dtn_inverse import (ForwardOracle, InverseError, RungeSynthesizer, dtn_map, linearize,
                          loglog_slope, recover_coefficients, window_bump)
from .geometry import GeometryError, build_grid, check_admissibility
from .operator import AssemblyDefect, assemble_RsA, discrete_norms, save_matrix
from .solve import (InteriorSolver, SolverError, SolverOptions, calibrate_rho, scale_to_c2,
                    solve_nonlinear)

log = logging.getLogger("magcalderon")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class Context:
    """Objects derived once from a configuration."""

    def __init__(self, cfg: RunConfig, out_dir: str | None = None):
        self.cfg = cfg
        self.spec = cfg.domain()
        self.params = cfg.kernel()
        self.potential = cfg.potential()
        report = check_admissibility(self.spec, self.potential)
        if not report.passed:
            raise ConfigError("inadmissible configuration:\n  " + "\n  ".join(report.failures()))
        self.admissibility = report
        self.grid = build_grid(self.spec)
        self.out = out_dir or cfg.output_dir()
        self._M = None
        self._model = None
        self._solver = None

    @property
    def M(self):
        if self._M is None:
            self._M = assemble_RsA(self.grid, self.potential, self.params)
        return self._M

    @property
    def solver(self):
        if self._solver is None:
            self._solver = InteriorSolver(self.M)
        return self._solver

    @property
    def model(self):
        if self._model is None:
            self._model = self.cfg.model(self.grid.points[self.grid.interior])
        return self._model

    def rho(self) -> float:
        rho = self.cfg.rho()
        if rho is None:
            rho = calibrate_rho(self.M, self.model, window_bump(self.grid), solver=self.solver)
        return rho

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def manifest(self, command, files, **measured):
        payload = {"command": command, "config_hash": self.cfg.hash(),
                   "config": self.cfg.values, "grid_hash": self.M.grid_hash(),
                   "matrix_hash": self.M.matrix_hash(),
                   "potential_hash": self.M.potential_hash(),
                   "files": {os.path.basename(f): file_hash(f) for f in files},
                   "measured": measured}
        write_manifest(self.path(f"manifest_{command}.json"), payload)
        return payload


def exterior_datum(ctx: Context, rho: float) -> np.ndarray:
    preset = ctx.cfg["data.preset"]
    if preset == "zero":
        return np.zeros(ctx.grid.size)
    if preset == "bump":
        return scale_to_c2(window_bump(ctx.grid), ctx.grid, ctx.cfg.get_float("data.scale") * rho)
    raise ConfigError(f"unknown data preset {preset!r}")


def solver_options(ctx: Context, rho) -> SolverOptions:
    return SolverOptions(rho=rho, tol=ctx.cfg.get_float("solver.tol"),
                         max_iter=ctx.cfg.get_int("solver.max_iter"))


# ---------------------------------------------------------------------------
# commands

def cmd_assemble(ctx: Context, args) -> dict:
    M = ctx.M
    mat = ctx.path("operator.bin")
    save_matrix(mat, M)
    grid_csv = ctx.path("grid.csv")
    write_csv(grid_csv, ["node", *("x", "y")[:ctx.grid.dim], "region"],
              ((k, *p, lab) for k, (p, lab) in enumerate(zip(ctx.grid.points, ctx.grid.labels()))))
    return ctx.manifest("assemble", [mat, grid_csv], reduction=M.meta.get("reduction", False),
                        scheme=M.scheme, nodes=ctx.grid.size,
                        admissibility={k: v[1] for k, v in ctx.admissibility.checks.items()})


def cmd_forward(ctx: Context, args) -> dict:
    rho = ctx.rho()
    g = exterior_datum(ctx, rho)
    if args.linearized:
        u = ctx.solver.solve(ctx.model.coefficient(1), np.zeros(len(ctx.solver.I)), g)
        measured = {"linearized": True, "rho": rho}
    else:
        u, rep = solve_nonlinear(ctx.M, ctx.model, g, solver_options(ctx, rho), ctx.solver)
        measured = rep.as_dict()
    measured["norms"] = discrete_norms(u, ctx.grid, ctx.params.s)
    out = ctx.path("solution.csv")
    write_csv(out, solution_header(ctx.grid), solution_rows(ctx.grid, u))
    return ctx.manifest("forward", [out], **measured)


def cmd_dtn(ctx: Context, args) -> dict:
    rho = ctx.rho()
    battery = ex.uniqueness_battery(ctx.grid, ctx.cfg.get_int("data.count"),
                                    ctx.cfg.get_int("run.seed"),
                                    c2=ctx.cfg.get_float("data.scale") * rho)
    rows, factors = [], []
    opts = solver_options(ctx, rho)
    for gid, g in enumerate(battery):
        rec = dtn_map(ctx.M, ctx.model, g, opts, ctx.solver)
        rows.extend(rec.rows(gid))
        factors.append(rec.report["contraction_factor"])
    out = ctx.path("dtn.csv")
    write_csv(out, ["g_id", "node", "value"], rows)
    return ctx.manifest("dtn", [out], rho=rho, contraction_factors=factors)


def cmd_invert(ctx: Context, args) -> dict:
    cfg = ctx.cfg
    L = cfg.get_int("inverse.L_target")
    lam = None if cfg["inverse.runge_lambda"] == "auto" else cfg.get_float("inverse.runge_lambda")
    truth = ctx.model if cfg.get_bool("inverse.truth") else None
    oracle = ForwardOracle(ctx.M, ctx.model, noise=cfg.get_float("inverse.noise"),
                           seed=cfg.get_int("run.seed"))
    res = recover_coefficients(oracle, cfg.eps_ladder(), L, mode=cfg["inverse.mode"],
                               runge_lambda=lam,
                               reconstruction_lambda=cfg.get_float("inverse.reconstruction_lambda"),
                               gate=cfg.get_float("inverse.gate"), truth=truth)
    grid = ctx.grid
    pts = grid.points[grid.interior]
    coord = ("x", "y")[:grid.dim]
    files = []
    for k in res.orders:
        path = ctx.path(f"coefficient_a{k}.csv")
        write_csv(path, ["node", *coord, f"a{k}"],
                  ((node, *p, res.coeffs[k - 1, i])
                   for i, (node, p) in enumerate(zip(grid.interior_idx, pts))))
        files.append(path)
    if res.errors is not None:
        path = ctx.path("errors.csv")
        write_csv(path, ["order", "relative_l2_error"], zip(res.orders, res.errors))
        files.append(path)
    return ctx.manifest("invert", files, **res.as_dict())


def _study_refine_h(ctx, args):
    s = ctx.params.s
    hs = [1 / 32, 1 / 64, 1 / 128, 1 / 256]
    errs = ex.getoor_errors(s, hs, dim=1)
    return ["h", "max_rel_error"], list(zip(hs, errs)), loglog_slope(hs, errs)


def _study_eps_rate(ctx, args):
    rho = ctx.rho()
    g = scale_to_c2(window_bump(ctx.grid), ctx.grid, rho / ex.LINEARIZATION_EPS[0])
    opts = SolverOptions(rho=rho, tol=1e-13, max_iter=500)

    def forward(data):
        return solve_nonlinear(ctx.M, ctx.model, data, opts, ctx.solver, norms=False)[0]

    _, rep = linearize(ctx.M, forward, g, ex.LINEARIZATION_EPS, rho=rho,
                       a1=ctx.model.coefficient(1), solver=ctx.solver)
    return ["eps", "hs_error"], list(zip(rep.eps, rep.errors)), rep.slope


def _study_runge(ctx, args):
    synth = RungeSynthesizer(ctx.M, ctx.model.coefficient(1), solver=ctx.solver)
    target = np.ones(len(ctx.solver.I))
    lams = [10.0 ** (-k) for k in range(2, 17, 2)]
    res = [synth.solve(target, lam).residual for lam in lams]
    return ["lambda", "residual"], list(zip(lams, res)), loglog_slope(lams, res)


STUDIES = {"refine-h": _study_refine_h, "eps-rate": _study_eps_rate,
           "runge-residual": _study_runge}


def cmd_study(ctx: Context, args) -> dict:
    if args.study not in STUDIES:
        raise ConfigError(f"unknown study {args.study!r}; choose from {sorted(STUDIES)}")
    header, rows, slope = STUDIES[args.study](ctx, args)
    out = ctx.path(f"study_{args.study}.csv")
    write_csv(out, header, rows)
    return ctx.manifest(f"study-{args.study}", [out], slope=slope)


VERIFY_CHECKS = {
    "1": ("reduction and symmetry", lambda: ex.check_reduction_symmetry()),
    "2": ("Getoor quadrature", lambda: ex.check_getoor()),
    "3": ("maximum principle", lambda: _mp("passed_min")),
    "4": ("L-infinity bound", lambda: _mp("passed_bound")),
    "5": ("contraction", lambda: ex.check_contraction()),
    "6": ("linearization rate", lambda: ex.check_linearization()),
    "7": ("Runge control", lambda: ex.check_runge()),
    "8": ("coefficient recovery", lambda: ex.check_recovery()),
    "9": ("uniqueness sanity", lambda: ex.check_uniqueness()),
}


def _mp(key):
    r = ex.check_maximum_principle()
    return dict(r, passed=r[key])


def cmd_verify(args) -> int:
    ids = args.criteria or sorted(VERIFY_CHECKS)
    failed = 0
    for cid in ids:
        if cid not in VERIFY_CHECKS:
            raise ConfigError(f"unknown criterion {cid!r}")
        name, fn = VERIFY_CHECKS[cid]
        t0 = time.perf_counter()
        try:
            r = fn()
            ok = bool(r["passed"])
            detail = ""
        except (SolverError, InverseError) as exc:
            ok, detail = False, f" ({exc})"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {cid} {name} [{time.perf_counter() - t0:.2f}s]{detail}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magcalderon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted configuration key")
        p.add_argument("--out", help="output directory (overrides run.output/run.name)")

    common(sub.add_parser("assemble", help="assemble and export the operator matrix"))
    p = sub.add_parser("forward", help="solve the exterior problem for the configured datum")
    common(p)
    p.add_argument("--linearized", action="store_true", help="solve with a_1 only")
    common(sub.add_parser("dtn", help="simulate window measurements for a data battery"))
    common(sub.add_parser("invert", help="recover Taylor coefficients"))
    p = sub.add_parser("study", help="convergence studies")
    common(p)
    p.add_argument("study", help="refine-h | eps-rate | runge-residual")
    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("criteria", nargs="*", help="criterion numbers (default: all)")
    return parser


COMMANDS = {"assemble": cmd_assemble, "forward": cmd_forward, "dtn": cmd_dtn,
            "invert": cmd_invert, "study": cmd_study}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig(dict(DEFAULTS))
        cfg = cfg.override(args.set)
        ctx = Context(cfg, args.out)
        manifest = COMMANDS[args.command](ctx, args)
        print(f"{args.command}: wrote {', '.join(sorted(manifest['files']))} to {ctx.out}")
        return EXIT_OK
    except (ConfigError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, InverseError, AssemblyDefect, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
