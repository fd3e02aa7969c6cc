"""Canonical experiment setups and the acceptance checks built on them.

Every check returns a plain dict with a boolean ``passed``, the measured
quantities and, where useful, ``rows``/``header`` for a CSV export.  All
randomness goes through ``numpy.random.default_rng(seed)``.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .config import write_csv
from .dtn_inverse import (ForwardOracle, RungeSynthesizer, linearize, loglog_slope,
                          nested_controls, recover_coefficients, verify_uniqueness,
                          window_bump)
from .geometry import DomainSpec, Grid, MagneticPotential, build_grid, smooth_bump
from .kernel import KernelParams
from .nonlinearity import TaylorNonlinearity, polynomial
from .operator import NonlocalMatrix, assemble_fractional, assemble_RsA
from .solve import (InteriorSolver, LinearProblem, SolverOptions, calibrate_rho,
                    scale_to_c2, solve_linear, solve_nonlinear)

# 1D reference geometry: Omega = (-1, 1), A supported in B_1.  Control and
# measurement windows interleave beyond B_3 so that each side of Omega sees
# both a control box and a measurement box.
WINDOW1 = (((3.0,), (5.0,)), ((-6.0,), (-4.5,)))
WINDOW2 = (((5.25,), (6.0,)), ((-4.25,), (-3.0,)))


def getoor_constant(n: int, s: float) -> float:
    """``(-Delta)^s (1 - |x|^2)_+^s`` on the unit ball."""
    return 4 ** s * math.gamma(1 + s) * math.gamma(n / 2 + s) / math.gamma(n / 2)


@dataclass
class Setup:
    grid: Grid
    params: KernelParams
    potential: MagneticPotential
    M: NonlocalMatrix
    truth: TaylorNonlinearity
    solver: InteriorSolver


def truth_fields(x):
    """Ground-truth Taylor coefficients of the reference cubic model."""
    return [1 + x ** 2 / 2, 1 + 0.5 * np.cos(np.pi * x / 2), 2 - x / 2]


def reference_setup(n_nodes: int = 401, s: float = 0.5, amplitude: float = 10.0,
                    half_width: float = 6.0) -> Setup:
    """1D reference problem with a capped bump potential and the cubic truth."""
    h = 2 * half_width / (n_nodes - 1)
    spec = DomainSpec(1, half_width, h, 1.0, 1.0, WINDOW1, WINDOW2)
    grid = build_grid(spec)
    params = KernelParams(1, s)
    A = MagneticPotential.bump(1, 1.0, amplitude)
    M = assemble_RsA(grid, A, params)
    xi = grid.points[grid.interior, 0]
    return Setup(grid, params, A, M, polynomial(truth_fields(xi)), InteriorSolver(M))


def _maybe_write(out_dir, name, header, rows):
    if out_dir is None:
        return None
    return write_csv(os.path.join(out_dir, name), header, rows)


def _strict_drop(values, rel=0.01):
    return all(b <= (1 - rel) * a for a, b in zip(values[:-1], values[1:]))


# ---------------------------------------------------------------------------
# 1. reduction and symmetry

def check_reduction_symmetry(n_nodes: int = 501) -> dict:
    t0 = time.perf_counter()
    half = 6.0
    spec = DomainSpec(1, half, 2 * half / (n_nodes - 1), 1.0, 1.0, WINDOW1, WINDOW2)
    grid = build_grid(spec)
    params = KernelParams(1, 0.5)
    zero = assemble_RsA(grid, MagneticPotential.zero(1), params)
    frac = assemble_fractional(grid, params)
    equal = bool(np.array_equal(zero.matrix, frac.matrix)) and zero.meta.get("reduction", False)
    mag = assemble_RsA(grid, MagneticPotential.bump(1, 1.0, 10.0), params)
    asym = []
    for Mx in (frac, mag):
        B = Mx.bilinear_matrix
        asym.append(float(np.linalg.norm(B - B.T) / np.linalg.norm(B)))
    runtime = time.perf_counter() - t0
    return {"passed": equal and max(asym) <= 1e-12 and runtime < 10.0,
            "reduction_equal": equal, "asymmetry": asym, "runtime": runtime,
            "nodes": grid.size}


# ---------------------------------------------------------------------------
# 2. Getoor quadrature fidelity

def getoor_errors(s: float, hs=(1 / 64, 1 / 128, 1 / 256), region: float = 0.9,
                  dim: int = 1, half_width: float = 3.5) -> list:
    """Max relative error of the discrete operator on ``(1 - |x|^2)_+^s``."""
    target = getoor_constant(dim, s)
    out = []
    for h in hs:
        spec = DomainSpec(dim, half_width, h, 1.0, 1.0)
        grid = build_grid(spec)
        M = assemble_fractional(grid, KernelParams(dim, s))
        rad = np.linalg.norm(grid.points, axis=1)
        u = np.clip(1 - rad ** 2, 0, None) ** s
        sel = rad <= region + 1e-12
        val = (M.matrix[sel] @ u)
        out.append(float(np.max(np.abs(val - target)) / target))
    return out


def check_getoor(s_values=(0.25, 0.5, 0.75), region: float = 0.9) -> dict:
    hs = (1 / 64, 1 / 128, 1 / 256)
    table = {s: getoor_errors(s, hs, region) for s in s_values}
    ok = all(e[0] > e[1] > e[2] and e[2] <= 0.02 for e in table.values())
    rows = [(s, h, e) for s, errs in table.items() for h, e in zip(hs, errs)]
    return {"passed": ok, "errors": table, "region": region, "rows": rows,
            "header": ["s", "h", "max_rel_error"]}


# ---------------------------------------------------------------------------
# 3-4. maximum principle and L-infinity bound

def random_linear_battery(setup: Setup, count: int = 200, seed: int = 0):
    """Random (q >= c > 0, f >= 0, g >= 0) problems on the reference grid."""
    rng = np.random.default_rng(seed)
    grid = setup.grid
    n_int = int(grid.interior.sum())
    ext_support = grid.window1 | grid.window2
    for _ in range(count):
        c = rng.uniform(0.05, 2.0)
        q = c + rng.uniform(0, 3.0, n_int)
        f = rng.uniform(0, 1, n_int) * (rng.uniform() < 0.8)
        g = np.zeros(grid.size)
        g[ext_support] = rng.uniform(0, 1, int(ext_support.sum())) * (rng.uniform() < 0.8)
        yield LinearProblem(setup.M, q, f, g, window=ext_support)


def check_maximum_principle(setup: Setup | None = None, count: int = 200, seed: int = 0) -> dict:
    setup = setup or reference_setup()
    worst_min, worst_excess = np.inf, -np.inf
    for prob in random_linear_battery(setup, count, seed):
        u = solve_linear(prob, setup.solver)
        worst_min = min(worst_min, float(u.min()))
        bound = np.max(prob.f, initial=0) / prob.c + np.max(np.abs(prob.g))
        worst_excess = max(worst_excess, float(np.max(np.abs(u)) - bound))
    return {"passed_min": worst_min >= -1e-12, "passed_bound": worst_excess <= 1e-10,
            "min_u": worst_min, "max_excess": worst_excess, "count": count}


# ---------------------------------------------------------------------------
# 5. contraction

def check_contraction(setup: Setup | None = None, out_dir=None) -> dict:
    setup = setup or reference_setup()
    grid, M, model = setup.grid, setup.M, setup.truth
    direction = window_bump(grid)
    rho = calibrate_rho(M, model, direction, solver=setup.solver)
    rhos = [rho / 2 ** k for k in range(4)]
    factors, residuals, iters = [], [], []
    for r in rhos:
        g = scale_to_c2(direction, grid, r)
        _, rep = solve_nonlinear(M, model, g, SolverOptions(rho=rho), setup.solver)
        factors.append(rep.contraction_factor)
        residuals.append(rep.final_residual)
        iters.append(rep.iterations)
    slope = loglog_slope(rhos, factors)
    rows = list(zip(rhos, factors, iters, residuals))
    sha = _maybe_write(out_dir, "contraction.csv",
                       ["rho", "contraction_factor", "iterations", "residual_sup"], rows)
    return {"passed": factors[0] < 1 and abs(slope - 1) <= 0.2 and max(residuals) <= 1e-8,
            "rho_default": rho, "factors": factors, "slope": slope,
            "max_residual": max(residuals), "rows": rows, "sha256": sha}


# ---------------------------------------------------------------------------
# 6. linearization

LINEARIZATION_EPS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def check_linearization(setup: Setup | None = None, out_dir=None, rho=None) -> dict:
    t0 = time.perf_counter()
    setup = setup or reference_setup()
    grid, M, model = setup.grid, setup.M, setup.truth
    direction = window_bump(grid)
    if rho is None:
        rho = calibrate_rho(M, model, direction, solver=setup.solver)
    g = scale_to_c2(direction, grid, rho / LINEARIZATION_EPS[0])
    opts = SolverOptions(rho=rho, tol=1e-13, max_iter=500)

    def forward(data):
        return solve_nonlinear(M, model, data, opts, setup.solver, norms=False)[0]

    _, rep = linearize(M, forward, g, LINEARIZATION_EPS, rho=rho,
                       a1=model.coefficient(1), solver=setup.solver)
    runtime = time.perf_counter() - t0
    rows = list(zip(rep.eps, rep.errors))
    sha = _maybe_write(out_dir, "linearization.csv", ["eps", "hs_error"], rows)
    return {"passed": 0.8 <= rep.slope <= 1.2 and runtime < 120.0, "slope": rep.slope,
            "errors": rep.errors, "extrapolation_error": rep.extrapolation_error,
            "runtime": runtime, "rows": rows, "sha256": sha}


# ---------------------------------------------------------------------------
# 7. Runge approximation

RUNGE_LAMBDAS = (1e-2, 1e-4, 1e-6, 1e-8)
RUNGE_STRIDES = (16, 8, 4, 2, 1)


def check_runge(setup: Setup | None = None, out_dir=None, lam_enrich: float = 1e-8) -> dict:
    setup = setup or reference_setup()
    grid, M = setup.grid, setup.M
    a1 = setup.truth.coefficient(1)
    target = np.ones(int(grid.interior.sum()))
    full = RungeSynthesizer(M, a1, solver=setup.solver)
    by_lambda = [full.solve(target, lam).residual for lam in RUNGE_LAMBDAS]
    counts, by_count = [], []
    for stride in RUNGE_STRIDES:
        ctrl = nested_controls(grid, stride)
        res = RungeSynthesizer(M, a1, ctrl, setup.solver).solve(target, lam_enrich)
        counts.append(len(ctrl))
        by_count.append(res.residual)
    rows = ([("lambda", lam, r) for lam, r in zip(RUNGE_LAMBDAS, by_lambda)]
            + [("controls", c, r) for c, r in zip(counts, by_count)])
    sha = _maybe_write(out_dir, "runge.csv", ["ladder", "parameter", "residual"], rows)
    return {"passed": _strict_drop(by_lambda) and _strict_drop(by_count),
            "residual_by_lambda": by_lambda, "control_counts": counts,
            "residual_by_controls": by_count, "rows": rows, "sha256": sha}


# ---------------------------------------------------------------------------
# 8. coefficient recovery

RECOVERY_EPS = (0.3, 0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.025)


def check_recovery(setup: Setup | None = None, out_dir=None, mode="oracle-interior",
                   eps=RECOVERY_EPS, L_target: int = 3) -> dict:
    t0 = time.perf_counter()
    setup = setup or reference_setup()
    oracle = ForwardOracle(setup.M, setup.truth)
    res = recover_coefficients(oracle, eps, L_target, mode=mode, truth=setup.truth)
    runtime = time.perf_counter() - t0
    grid = setup.grid
    xi = grid.points[grid.interior, 0]
    rows = [(int(node), x, *res.coeffs[:, k])
            for k, (node, x) in enumerate(zip(grid.interior_idx, xi))]
    sha = _maybe_write(out_dir, "recovery.csv",
                       ["node", "x", *(f"a{k}" for k in res.orders)], rows)
    return {"passed": max(res.errors) <= 0.05 and runtime < 300.0, "errors": res.errors,
            "runge_lambda": res.runge_lambda, "runge_residual": res.runge_residual,
            "runtime": runtime, "history": res.history, "rows": rows, "sha256": sha}


# ---------------------------------------------------------------------------
# 9. uniqueness sanity

def uniqueness_battery(grid, count: int = 10, seed: int = 0, c2: float = 1.0):
    """Random positive combinations of smooth bumps inside W1."""
    rng = np.random.default_rng(seed)
    x = grid.points[:, 0] if grid.dim == 1 else np.linalg.norm(grid.points, axis=1)
    battery = []
    boxes = grid.spec.window1
    for _ in range(count):
        g = np.zeros(grid.size)
        for b in boxes:
            lo, hi = b.lo[0], b.hi[0]
            for _ in range(2):
                centre = rng.uniform(lo + 0.3, hi - 0.3)
                width = rng.uniform(0.2, 0.3)
                g += rng.uniform(0.5, 1.5) * smooth_bump((x - centre) / width)
        g = np.where(grid.window1, g, 0.0)
        battery.append(scale_to_c2(g, grid, c2))
    return battery


def check_uniqueness(setup: Setup | None = None, count: int = 10, seed: int = 0) -> dict:
    setup = setup or reference_setup()
    model = setup.truth
    rho = calibrate_rho(setup.M, model, window_bump(setup.grid), solver=setup.solver)
    battery = uniqueness_battery(setup.grid, count, seed, c2=rho)
    same = verify_uniqueness(setup.M, model, model.with_coeffs(model.coeffs.copy()), battery)
    pert = model.coeffs.copy()
    pert[1] += 0.1
    diff = verify_uniqueness(setup.M, model, model.with_coeffs(pert), battery)
    return {"passed": same["max_difference"] <= 1e-9 and diff["max_difference"] >= 1e-6,
            "identical": same["max_difference"], "perturbed": diff["max_difference"],
            "rho": rho}


# ---------------------------------------------------------------------------
# 10. determinism

def run_reproducible(out_dir) -> dict:
    """Criteria 5-8 writing their CSVs into ``out_dir``; returns file hashes."""
    setup = reference_setup()
    c5 = check_contraction(setup, out_dir)
    c6 = check_linearization(setup, out_dir, rho=c5["rho_default"])
    c7 = check_runge(setup, out_dir)
    c8 = check_recovery(setup, out_dir)
    return {name: r["sha256"] for name, r in
            (("contraction", c5), ("linearization", c6), ("runge", c7), ("recovery", c8))}
