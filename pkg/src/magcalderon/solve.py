"""Linear and semilinear exterior Dirichlet problems on the lattice.

Linear problem ``(R + q) u = f`` in Omega, ``u = g`` outside: the interior block
``(M_II + diag q) u_I = f - M_IE g_E`` is solved by a dense Cholesky factorisation
(the block is symmetric positive definite for an admissible assembly).

Semilinear problem ``R u + a(x, u) = 0`` in Omega, ``u = g`` outside: with
``u0 = P_{a_1} g`` and ``J`` the zero-exterior solution operator of
``R + a_1``, the correction ``v = u - u0`` is the fixed point of
``v -> J(-R_1(x, u0 + v))``, iterated plainly until the sup-norm update is
below ``tol``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .nonlinearity import TaylorNonlinearity
from .operator import NonlocalMatrix, c2_norm, gagliardo_seminorm, holder_seminorm, l2_norm

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical failure in a forward solve."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FactorizationError(SolverError):
    pass


class ContractionError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class InteriorSolver:
    """Cached factorisations of ``M_II + diag(q)`` for one assembled operator."""

    def __init__(self, M: NonlocalMatrix):
        self.M = M
        grid = M.grid
        self.I = grid.interior_idx
        self.E = grid.exterior_idx
        self.M_II = M.matrix[np.ix_(self.I, self.I)]
        self.M_IE = M.matrix[np.ix_(self.I, self.E)]
        self._cache = {}

    @property
    def grid(self):
        return self.M.grid

    def factor(self, q):
        q = np.ascontiguousarray(q, dtype=float)
        key = q.tobytes()
        fac = self._cache.get(key)
        if fac is None:
            if len(self._cache) > 8:
                self._cache.clear()
            A = self.M_II + np.diag(q)
            try:
                fac = la.cho_factor(A, lower=True, check_finite=True)
            except la.LinAlgError as exc:
                cond = np.linalg.cond(A)
                raise FactorizationError(
                    f"interior block not positive definite (condition estimate {cond:.3e}); "
                    "this points at an assembly defect") from exc
            self._cache[key] = fac
        return fac

    def solve_interior(self, q, rhs):
        return la.cho_solve(self.factor(q), np.asarray(rhs, dtype=float))

    def solve(self, q, f, g) -> np.ndarray:
        """Full grid function with ``u_E = g_E`` and the interior equations solved."""
        g = np.asarray(g, dtype=float)
        u = np.zeros(self.grid.size)
        u[self.E] = g[self.E]
        rhs = np.asarray(f, dtype=float) - self.M_IE @ g[self.E]
        u[self.I] = self.solve_interior(q, rhs)
        return u

    def interior_residual(self, q, f, u) -> np.ndarray:
        return (self.M.matrix @ u)[self.I] + q * u[self.I] - f


@dataclass
class LinearProblem:
    """``(R + q) u = f`` in Omega, ``u = g`` on the exterior nodes.

    ``q`` and ``f`` live on interior nodes, ``g`` on the full grid.  With
    ``window`` set, g must vanish at exterior nodes outside that mask.
    """

    M: NonlocalMatrix
    q: np.ndarray
    f: np.ndarray
    g: np.ndarray
    window: np.ndarray | None = None

    def __post_init__(self):
        grid = self.M.grid
        n_int = int(grid.interior.sum())
        self.q = np.broadcast_to(np.asarray(self.q, dtype=float), (n_int,)).copy()
        self.f = np.broadcast_to(np.asarray(self.f, dtype=float), (n_int,)).copy()
        self.g = np.asarray(self.g, dtype=float)
        if self.g.shape != (grid.size,):
            raise ValueError(f"g must be a grid function of shape ({grid.size},)")
        if not np.min(self.q) > 0:
            raise ValueError(f"potential q must satisfy q >= c > 0, min q = {np.min(self.q)}")
        if self.window is not None:
            outside = grid.exterior & ~np.asarray(self.window, dtype=bool)
            if np.any(self.g[outside] != 0):
                raise ValueError("exterior datum g is not supported in the window")

    @property
    def c(self) -> float:
        return float(np.min(self.q))


def solve_linear(problem: LinearProblem, solver: InteriorSolver | None = None) -> np.ndarray:
    solver = solver or InteriorSolver(problem.M)
    u = solver.solve(problem.q, problem.f, problem.g)
    res = solver.interior_residual(problem.q, problem.f, u)
    scale = max(np.linalg.norm(problem.f), np.linalg.norm(problem.M.matrix[solver.I] @ u), 1e-300)
    if np.linalg.norm(res) > 1e-10 * scale:
        raise SolverError(f"linear solve residual {np.linalg.norm(res) / scale:.3e} too large")
    return u


def solve_J(solver: InteriorSolver, a1, f) -> np.ndarray:
    """Zero-exterior solution of ``(R + a_1) v = f``; returns interior values."""
    return solver.solve_interior(a1, f)


@dataclass
class SolverOptions:
    rho: float | None = None
    tol: float = 1e-10
    max_iter: int = 200
    # a few extra sweeps past tol keep the contraction estimate meaningful
    min_iter: int = 3
    check_data: bool = True


@dataclass
class SolveReport:
    iterations: int = 0
    update_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    contraction_factor: float = 0.0
    ratios: list = field(default_factory=list)
    rho: float | None = None
    g_c2: float = 0.0
    u_sup: float = 0.0
    u_holder: float = 0.0
    u_hs: float = 0.0
    final_residual: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "contraction_factor": self.contraction_factor,
            "rho": self.rho,
            "g_c2": self.g_c2,
            "u_sup": self.u_sup,
            "u_holder": self.u_holder,
            "u_hs": self.u_hs,
            "final_residual": self.final_residual,
            "update_history": [list(x) for x in self.update_history],
            "residual_history": [list(x) for x in self.residual_history],
        }


def equation_residual(M: NonlocalMatrix, model: TaylorNonlinearity, u) -> np.ndarray:
    I = M.grid.interior_idx
    return (M.matrix @ u)[I] + model.value(u[I])


def _contraction_estimate(updates, floor):
    ratios = [updates[k + 1] / updates[k] for k in range(len(updates) - 1)
              if updates[k] > floor and updates[k + 1] > floor]
    return (max(ratios) if ratios else 0.0), ratios


def solve_nonlinear(M: NonlocalMatrix, model: TaylorNonlinearity, g,
                    opts: SolverOptions | None = None,
                    solver: InteriorSolver | None = None,
                    norms: bool = True):
    """Fixed-point solve of ``R u + a(x, u) = 0`` in Omega, ``u = g`` outside.

    Returns ``(u, report)``.  Raises :class:`ContractionError` when the measured
    contraction factor reaches 1 and :class:`ConvergenceError` after
    ``max_iter`` iterations.
    """
    opts = opts or SolverOptions()
    solver = solver or InteriorSolver(M)
    grid = M.grid
    g = np.asarray(g, dtype=float)
    report = SolveReport(rho=opts.rho)
    report.g_c2 = c2_norm(g, grid)
    if opts.check_data and opts.rho is not None and report.g_c2 > opts.rho * (1 + 1e-12):
        raise SolverError(f"||g||_C2 = {report.g_c2:.6g} exceeds rho = {opts.rho:.6g}", report)

    I = solver.I
    a1 = model.coefficient(1)
    u0 = solver.solve(a1, np.zeros(len(I)), g)
    u0_I = u0[I]
    v = np.zeros(len(I))
    floor = 1e3 * np.finfo(float).eps * max(float(np.max(np.abs(u0_I), initial=0.0)), 1e-300)
    updates = []
    converged = model.order == 1
    if converged:
        report.update_history.append((0.0, 0.0))
    it = 0
    while not converged:
        it += 1
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = -model.remainder(u0_I + v, 1)
            v_new = solver.solve_interior(a1, rhs) if np.all(np.isfinite(rhs)) else rhs
            delta = v_new - v
            upd_sup = float(np.max(np.abs(delta), initial=0.0))
            upd_l2 = float(np.sqrt(grid.h ** grid.dim * np.sum(delta ** 2)))
        if not np.isfinite(upd_l2):
            report.iterations = it
            report.contraction_factor = np.inf
            raise ContractionError("iterates blew up: rho too large", report)
        v = v_new
        updates.append(upd_sup)
        report.update_history.append((upd_l2, upd_sup))
        u = u0.copy()
        u[I] += v
        with np.errstate(over="ignore", invalid="ignore"):
            res = equation_residual(M, model, u)
            report.residual_history.append(
                (float(np.sqrt(grid.h ** grid.dim * np.sum(res ** 2))),
                 float(np.max(np.abs(res)))))
        factor, _ = _contraction_estimate(updates, floor)
        if factor >= 1.0 and len(updates) >= 3:
            report.iterations = it
            report.contraction_factor = factor
            raise ContractionError(
                f"measured contraction factor {factor:.3g} >= 1: rho too large", report)
        if upd_sup <= opts.tol and (it >= opts.min_iter or upd_sup <= floor):
            converged = True
        elif it >= opts.max_iter:
            report.iterations = it
            raise ConvergenceError(f"no convergence after {it} iterations "
                                   f"(last update {upd_sup:.3e})", report)
    report.iterations = it
    report.contraction_factor, report.ratios = _contraction_estimate(updates, floor)
    u = u0.copy()
    u[I] += v
    report.final_residual = float(np.max(np.abs(equation_residual(M, model, u)), initial=0.0))
    report.u_sup = float(np.max(np.abs(u)))
    if norms:
        s = M.params.s
        report.u_holder = holder_seminorm(u, grid, s)
        report.u_hs = float(np.hypot(l2_norm(u, grid), gagliardo_seminorm(u, grid, s)))
    log.debug("fixed point: %d iterations, factor %.3g", it, report.contraction_factor)
    return u, report


def scale_to_c2(g, grid, target: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return g * (target / c2_norm(g, grid))


def calibrate_rho(M: NonlocalMatrix, model: TaylorNonlinearity, g_direction,
                  target: float = 0.5, k_range=(-16, 40),
                  solver: InteriorSolver | None = None) -> float:
    """Largest ``rho = 2^-k`` whose contraction factor on ``g_direction`` is <= target.

    ``k`` runs upwards from ``k_range[0]`` (negative values give rho > 1).
    """
    solver = solver or InteriorSolver(M)
    for k in range(k_range[0], k_range[1] + 1):
        rho = 2.0 ** (-k)
        g = scale_to_c2(g_direction, M.grid, rho)
        try:
            _, rep = solve_nonlinear(M, model, g, SolverOptions(rho=rho, max_iter=500),
                                     solver, norms=False)
        except SolverError:
            continue
        if rep.contraction_factor <= target:
            return rho
    raise ContractionError(f"no rho >= 2^-{k_range[1]} gives contraction factor <= {target}")


def verify_small_data_bound(M: NonlocalMatrix, model: TaylorNonlinearity, battery,
                            opts: SolverOptions | None = None,
                            solver: InteriorSolver | None = None) -> dict:
    """Ratio ``[u]_{C^s} / ||g||_{C^2}`` over a battery of exterior data.

    ``[u]_{C^s}`` is the discrete Hoelder norm (sup plus seminorm) on the
    whole lattice.  Zero data are skipped.
    """
    solver = solver or InteriorSolver(M)
    opts = opts or SolverOptions()
    ratios = []
    for g in battery:
        g = np.asarray(g, dtype=float)
        if not np.any(g):
            continue
        u, rep = solve_nonlinear(M, model, g, opts, solver)
        ratios.append((rep.u_sup + rep.u_holder) / rep.g_c2)
    ratios = np.array(ratios)
    spread = float(ratios.max() / ratios.min()) if len(ratios) else np.nan
    return {"ratios": ratios.tolist(), "max_ratio": float(ratios.max()) if len(ratios) else np.nan,
            "spread": spread, "bounded": bool(spread <= 2.0)}
