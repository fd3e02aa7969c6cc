"""Partial exterior measurements and recovery of Taylor coefficients.

Measurements are values of ``R u`` at the nodes of a window ``W2`` for data
``g`` supported in a window ``W1``.  Recovery follows a layered scheme:

1. estimate ``a_1`` from the small-data limit ``Q(eps g)/eps -> P_{a_1} g``;
2. synthesise a control ``g`` whose linear state is close to 1 in Omega;
3. for an eps-ladder, read the interior states ``u_eps`` (directly or by a
   Tikhonov reconstruction from window data) and the values
   ``a(x, u_eps(x)) = -(M u_eps)(x)``;
4. fit ``sum_k a_k(x) z^k / k!`` node by node by least squares.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .nonlinearity import TaylorNonlinearity
from .operator import NonlocalMatrix, c2_norm, hs_norm, l2_norm
from .solve import InteriorSolver, SolverOptions, solve_nonlinear

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-8
RUNGE_GATE = 0.1


class InverseError(RuntimeError):
    pass


class RungeError(InverseError):
    pass


class FitError(InverseError):
    pass


@dataclass
class DtNRecord:
    """Exterior datum ``g`` and the measured ``(M u)`` at the nodes of W2."""

    g: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    solver_hash: str = ""
    report: dict = field(default_factory=dict)

    def check(self, grid) -> None:
        if np.any(self.g[grid.exterior & ~grid.window1] != 0):
            raise InverseError("exterior datum is not supported in W1")
        if np.any(self.g[grid.interior] != 0):
            raise InverseError("exterior datum must vanish in Omega")
        if not np.all(grid.window2[self.nodes]):
            raise InverseError("measurement nodes must lie in W2")

    def rows(self, gid=0):
        return [(gid, int(k), float(v)) for k, v in zip(self.nodes, self.values)]


def _solver_hash(M: NonlocalMatrix, opts: SolverOptions) -> str:
    text = f"{M.matrix_hash()}:{opts.tol!r}:{opts.max_iter}:{opts.rho!r}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def dtn_map(M: NonlocalMatrix, model: TaylorNonlinearity, g,
            opts: SolverOptions | None = None, solver: InteriorSolver | None = None,
            return_state: bool = False):
    """Partial DtN record of ``g``; optionally also the full solution."""
    opts = opts or SolverOptions()
    grid = M.grid
    g = np.asarray(g, dtype=float)
    u, rep = solve_nonlinear(M, model, g, opts, solver, norms=False)
    nodes = grid.window2_idx
    rec = DtNRecord(g=g, nodes=nodes, values=(M.matrix[nodes] @ u),
                    solver_hash=_solver_hash(M, opts),
                    report={"iterations": rep.iterations,
                            "contraction_factor": rep.contraction_factor})
    rec.check(grid)
    return (rec, u) if return_state else rec


class ForwardOracle:
    """Black-box forward map for a hidden nonlinearity.

    The ground-truth model is kept private; callers get window measurements
    and, in the oracle-interior mode, interior states.
    """

    __slots__ = ("_M", "_model", "_opts", "_solver", "_noise", "_rng", "calls")

    def __init__(self, M: NonlocalMatrix, model: TaylorNonlinearity,
                 opts: SolverOptions | None = None, noise: float = 0.0, seed: int = 0):
        self._M = M
        self._model = model
        self._opts = opts or SolverOptions(rho=None, tol=1e-13, max_iter=500)
        self._solver = InteriorSolver(M)
        # relative Gaussian noise on window measurements only
        self._noise = float(noise)
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    @property
    def operator(self) -> NonlocalMatrix:
        return self._M

    def measure(self, g) -> DtNRecord:
        self.calls += 1
        rec = dtn_map(self._M, self._model, g, self._opts, self._solver)
        if self._noise > 0:
            scale = self._noise * float(np.max(np.abs(rec.values), initial=0.0))
            rec.values = rec.values + scale * self._rng.standard_normal(len(rec.values))
        return rec

    def state(self, g) -> np.ndarray:
        """Full-grid solution; only the oracle-interior mode may call this."""
        self.calls += 1
        u, _ = solve_nonlinear(self._M, self._model, g, self._opts, self._solver, norms=False)
        return u

    def measure_with_state(self, g):
        self.calls += 1
        return dtn_map(self._M, self._model, g, self._opts, self._solver, return_state=True)


# ---------------------------------------------------------------------------
# linearisation

@dataclass
class LinearizationReport:
    eps: list
    errors: list
    slope: float
    extrapolation_error: float
    reference_available: bool

    def as_dict(self) -> dict:
        return {"eps": list(self.eps), "errors": list(self.errors), "slope": self.slope,
                "extrapolation_error": self.extrapolation_error}


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def linearize(M: NonlocalMatrix, forward, g, eps_ladder, rho: float | None = None,
              a1=None, solver: InteriorSolver | None = None):
    """Small-data limit ``Q(eps g)/eps`` and its first-order rate.

    Parameters
    ----------
    forward : callable
        ``g -> u`` full-grid nonlinear solution (a :class:`ForwardOracle`'s
        ``state`` or a closure around :func:`solve_nonlinear`).
    eps_ladder : sequence of float
        Strictly descending.
    rho : float, optional
        Radius of the small-data ball; every ``eps ||g||_{C^2}`` must fit.
    a1 : array, optional
        Ground-truth first coefficient.  When given, errors against
        ``P_{a_1} g`` in the discrete ``H^s`` norm and their log-log slope are
        reported.

    Returns
    -------
    u_lin : ndarray
        Intercept of a per-node linear fit of ``w_eps`` in eps.
    report : LinearizationReport
    """
    eps = np.asarray(eps_ladder, dtype=float)
    if len(eps) < 2 or np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
        raise InverseError("eps ladder must be positive and strictly descending")
    g = np.asarray(g, dtype=float)
    if rho is not None:
        gn = c2_norm(g, M.grid)
        if eps[0] * gn > rho * (1 + 1e-12):
            raise InverseError(f"eps ladder leaves the small-data ball: "
                               f"{eps[0]:.3g} * ||g||_C2 = {eps[0] * gn:.4g} > rho = {rho:.4g}")
    W = np.array([forward(e * g) / e for e in eps])
    V = np.vstack([np.ones_like(eps), eps]).T
    coef, *_ = np.linalg.lstsq(V, W, rcond=None)
    u_lin = coef[0]
    errors, slope, extrap = [], float("nan"), float("nan")
    if a1 is not None:
        solver = solver or InteriorSolver(M)
        Pg = solver.solve(np.asarray(a1, dtype=float), np.zeros(len(solver.I)), g)
        s = M.params.s
        errors = [hs_norm(w - Pg, M.grid, s) for w in W]
        if min(errors) > 0:
            slope = loglog_slope(eps, errors)
        extrap = l2_norm(u_lin - Pg, M.grid) / l2_norm(Pg, M.grid)
    report = LinearizationReport(eps=eps.tolist(), errors=[float(e) for e in errors],
                                 slope=slope, extrapolation_error=float(extrap),
                                 reference_available=a1 is not None)
    return u_lin, report


def estimate_a1(M: NonlocalMatrix, u_lin, floor: float = 1e-6) -> np.ndarray:
    """Pointwise ``a_1 = -(M u)/u`` from a linear state, clipped below at ``floor``."""
    I = M.grid.interior_idx
    u_I = u_lin[I]
    if np.any(np.abs(u_I) < 1e-300):
        raise InverseError("linear state vanishes at an interior node")
    return np.maximum(-(M.matrix[I] @ u_lin) / u_I, floor)


# ---------------------------------------------------------------------------
# Runge approximation

def control_to_state(M: NonlocalMatrix, a1, controls, solver: InteriorSolver | None = None):
    """Interior states of the unit exterior data at the ``controls`` nodes."""
    solver = solver or InteriorSolver(M)
    B = M.matrix[np.ix_(solver.I, np.asarray(controls))]
    return -solver.solve_interior(np.asarray(a1, dtype=float), B)


@dataclass
class RungeResult:
    g: np.ndarray
    residual: float
    lam: float
    controls: np.ndarray
    state: np.ndarray

    @property
    def n_controls(self) -> int:
        return len(self.controls)


class RungeSynthesizer:
    """Tikhonov controls for one operator, ``a_1`` and control set.

    Minimises ``||S g - t||^2 + lam ||g||^2`` in the cell-weighted norms.  The
    minimiser is evaluated through the SVD of the control-to-state matrix
    ``S`` (filter factors ``sigma / (sigma^2 + lam)``), which avoids squaring
    its condition number.
    """

    def __init__(self, M: NonlocalMatrix, a1, controls=None,
                 solver: InteriorSolver | None = None):
        self.M = M
        grid = M.grid
        self.controls = grid.window1_idx if controls is None else np.asarray(controls)
        if len(self.controls) == 0:
            raise InverseError("control set is empty")
        if not np.all(grid.window1[self.controls]):
            raise InverseError("controls must lie in W1")
        self.S = control_to_state(M, a1, self.controls, solver)
        self.U, self.sigma, self.Vt = np.linalg.svd(self.S, full_matrices=False)

    def solve(self, target, lam: float) -> RungeResult:
        if not lam > 0:
            raise InverseError(f"regularisation parameter must be positive, got {lam}")
        grid = self.M.grid
        target = np.asarray(target, dtype=float)
        filt = self.sigma / (self.sigma ** 2 + lam)
        coeffs = self.Vt.T @ (filt * (self.U.T @ target))
        state = self.S @ coeffs
        g = np.zeros(grid.size)
        g[self.controls] = coeffs
        residual = float(np.sqrt(grid.h ** grid.dim * np.sum((state - target) ** 2)))
        return RungeResult(g=g, residual=residual, lam=lam, controls=self.controls, state=state)


def runge_control(M: NonlocalMatrix, a1, target, lam: float = DEFAULT_LAMBDA,
                  controls=None, solver: InteriorSolver | None = None) -> RungeResult:
    """Control on W1 whose linear state approximates ``target`` on Omega."""
    if not lam > 0:
        raise InverseError(f"regularisation parameter must be positive, got {lam}")
    return RungeSynthesizer(M, a1, controls, solver).solve(target, lam)


def nested_controls(grid, stride: int) -> np.ndarray:
    """Every ``stride``-th W1 node; halving the stride doubles the node count
    and the sets are nested."""
    w = grid.window1_idx
    if stride < 1:
        raise InverseError(f"stride must be >= 1, got {stride}")
    return w[::stride]


# ---------------------------------------------------------------------------
# interior reconstruction

def reconstruct_interior(M: NonlocalMatrix, record: DtNRecord, lam: float = 1e-10,
                         return_info: bool = False):
    """Tikhonov estimate of the interior state from window measurements.

    Solves ``min_v ||M_{W2,I} v - (m - M_{W2,E} g_E)||^2 + lam ||v||^2``.
    """
    if not lam > 0:
        raise InverseError(f"regularisation parameter must be positive, got {lam}")
    grid = M.grid
    I, E = grid.interior_idx, grid.exterior_idx
    rows = record.nodes
    B = M.matrix[np.ix_(rows, I)]
    rhs = record.values - M.matrix[np.ix_(rows, E)] @ record.g[E]
    U, sig, Vt = np.linalg.svd(B, full_matrices=False)
    v = Vt.T @ (sig / (sig ** 2 + lam) * (U.T @ rhs))
    u = record.g.copy()
    u[I] = v
    if return_info:
        return u, {"sigma_min": float(sig.min()), "sigma_max": float(sig.max()),
                   "rank": int(np.sum(sig > sig[0] * len(sig) * np.finfo(float).eps))}
    return u


# ---------------------------------------------------------------------------
# recovery

@dataclass
class RecoveryResult:
    coeffs: np.ndarray
    eps_ladder: list
    runge_lambda: float
    runge_residual: float
    mode: str
    errors: list | None = None
    reconstruction_lambda: float | None = None
    conditioning: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def orders(self) -> list:
        return list(range(1, self.coeffs.shape[0] + 1))

    def as_dict(self) -> dict:
        return {"orders": self.orders, "eps_ladder": list(self.eps_ladder),
                "runge_lambda": self.runge_lambda, "runge_residual": self.runge_residual,
                "mode": self.mode, "errors": self.errors,
                "reconstruction_lambda": self.reconstruction_lambda,
                "conditioning": self.conditioning, "history": self.history}


def relative_error(estimate, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    nrm = np.linalg.norm(truth)
    diff = np.linalg.norm(np.asarray(estimate, dtype=float) - truth)
    return float(diff / nrm) if nrm > 0 else float(diff)


def fit_taylor(z, values, order: int):
    """Per-node least-squares fit of ``sum_{k<=order} b_k z^k / k!``.

    ``z`` and ``values`` have shape ``(n_samples, n_nodes)``.  Returns the
    coefficients ``(order, n_nodes)`` and the worst condition number of the
    per-node design matrices.
    """
    z = np.asarray(z, dtype=float)
    values = np.asarray(values, dtype=float)
    n_samples, n_nodes = z.shape
    if n_samples < order:
        raise FitError(f"{n_samples} samples cannot determine {order} coefficients")
    fact = np.cumprod(np.arange(1, order + 1, dtype=float))
    out = np.empty((order, n_nodes))
    worst = 0.0
    for i in range(n_nodes):
        V = z[:, i, None] ** np.arange(1, order + 1) / fact
        # column scaling keeps the rank test meaningful for tiny z
        scale = np.linalg.norm(V, axis=0)
        if np.any(scale == 0):
            raise FitError(f"degenerate samples at node {i}")
        Vs = V / scale
        sol, _, rank, sv = np.linalg.lstsq(Vs, values[:, i], rcond=None)
        if rank < order:
            raise FitError(f"rank-deficient fit at node {i} (rank {rank} < {order}); "
                           "lengthen or spread the eps ladder")
        worst = max(worst, float(sv[0] / sv[-1]))
        out[:, i] = sol / scale
    return out, worst


def _lambda_ladder(start: float, stop: float):
    k0 = int(round(-np.log10(start)))
    k1 = int(round(-np.log10(stop)))
    return [10.0 ** (-k) for k in range(k0, k1 + 1)]


def recover_coefficients(oracle: ForwardOracle, eps_ladder, L_target: int,
                         mode: str = "oracle-interior", probe=None,
                         runge_lambda: float | None = None,
                         lambda_floor: float = 1e-18,
                         reconstruction_lambda: float = 1e-10,
                         gate: float = RUNGE_GATE, passes: int = 2,
                         truth: TaylorNonlinearity | None = None) -> RecoveryResult:
    """Recover ``a_1, ..., a_L`` on the interior nodes from the forward oracle.

    Parameters
    ----------
    oracle : ForwardOracle
    eps_ladder : sequence of float
        Data amplitudes applied to the Runge control.
    L_target : int
    mode : {"oracle-interior", "reconstructed-interior"}
    probe : array, optional
        Exterior datum for the ``a_1`` bootstrap; defaults to a unit W1 bump.
    runge_lambda : float, optional
        Fixed Tikhonov parameter for the control.  By default the largest
        decade from 1e-8 down to ``lambda_floor`` whose residual is below
        ``gate`` is used.
    gate : float
        Abort when ``||1 - u_g||`` cannot be brought below this value.
    passes : int
        Control synthesis rounds; each round after the first rebuilds the
        control from the previous ``a_1`` estimate.
    truth : TaylorNonlinearity, optional
        Ground truth for the error table.
    """
    if mode not in ("oracle-interior", "reconstructed-interior"):
        raise InverseError(f"unknown interior mode {mode!r}")
    if L_target < 1:
        raise InverseError("L_target must be >= 1")
    eps = np.asarray(eps_ladder, dtype=float)
    if len(eps) < L_target:
        raise FitError(f"eps ladder of length {len(eps)} is too short for L_target={L_target}")
    M = oracle.operator
    grid = M.grid
    I = grid.interior_idx
    solver = InteriorSolver(M)

    def interior_state(g):
        if mode == "oracle-interior":
            return oracle.state(g)
        return reconstruct_interior(M, oracle.measure(g), reconstruction_lambda)

    # bootstrap a_1 from the small-data limit
    if probe is None:
        probe = window_bump(grid)
    probe = np.asarray(probe, dtype=float)
    boot_eps = eps.min() * np.array([1.0, 0.5, 0.25])
    u_lin, _ = linearize(M, lambda g: interior_state(g), probe, boot_eps)
    a1_hat = estimate_a1(M, u_lin)
    history = [{"stage": "bootstrap", "a1_min": float(a1_hat.min()),
                "a1_max": float(a1_hat.max())}]

    target = np.ones(len(I))
    coeffs, runge, worst = None, None, 0.0
    for p in range(passes):
        synth = RungeSynthesizer(M, a1_hat, solver=solver)
        lams = [runge_lambda] if runge_lambda else _lambda_ladder(DEFAULT_LAMBDA, lambda_floor)
        for lam in lams:
            runge = synth.solve(target, lam)
            if runge.residual < gate:
                break
        if runge.residual >= gate:
            raise RungeError(f"Runge residual {runge.residual:.4g} >= {gate} at lambda "
                             f"{runge.lam:.1e}: target 1 is not approximated")
        Z = np.empty((len(eps), len(I)))
        Y = np.empty((len(eps), len(I)))
        for k, e in enumerate(eps):
            u = interior_state(e * runge.g)
            Z[k] = u[I]
            Y[k] = -(M.matrix[I] @ u)
        coeffs, worst = fit_taylor(Z, Y, L_target)
        a1_hat = np.maximum(coeffs[0], 1e-6)
        history.append({"stage": f"pass{p + 1}", "runge_lambda": runge.lam,
                        "runge_residual": runge.residual, "fit_condition": worst})

    errors = None
    if truth is not None:
        errors = [relative_error(coeffs[k], truth.coefficient(k + 1)) for k in range(L_target)]
    return RecoveryResult(coeffs=coeffs, eps_ladder=eps.tolist(), runge_lambda=runge.lam,
                          runge_residual=runge.residual, mode=mode, errors=errors,
                          reconstruction_lambda=(reconstruction_lambda
                                                 if mode == "reconstructed-interior" else None),
                          conditioning=[worst], history=history)


def window_bump(grid, which: int = 1) -> np.ndarray:
    """Smooth bump of height 1 on each box of W1 (or W2)."""
    from .geometry import smooth_bump

    boxes = grid.spec.window1 if which == 1 else grid.spec.window2
    g = np.zeros(grid.size)
    for b in boxes:
        lo, hi = np.asarray(b.lo), np.asarray(b.hi)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        t = np.max(np.abs(grid.points - mid) / half, axis=1)
        g += np.where(t < 1, smooth_bump(np.minimum(t, 0.999999)), 0.0)
    mask = grid.window1 if which == 1 else grid.window2
    return np.where(mask, g, 0.0)


def verify_uniqueness(M: NonlocalMatrix, model_a: TaylorNonlinearity,
                      model_b: TaylorNonlinearity, battery,
                      opts: SolverOptions | None = None) -> dict:
    """Largest W2 measurement difference between two models over a battery."""
    opts = opts or SolverOptions(rho=None, tol=1e-13, max_iter=500)
    solver = InteriorSolver(M)
    diffs = []
    for g in battery:
        ra = dtn_map(M, model_a, g, opts, solver)
        rb = dtn_map(M, model_b, g, opts, solver)
        diffs.append(float(np.max(np.abs(ra.values - rb.values), initial=0.0)))
    order = max(model_a.order, model_b.order)
    ca = np.vstack([model_a.coeffs, np.zeros((order - model_a.order, model_a.n_nodes))])
    cb = np.vstack([model_b.coeffs, np.zeros((order - model_b.order, model_b.n_nodes))])
    same = bool(np.max(np.abs(ca - cb)) <= 1e-12)
    sep = max(diffs) if diffs else 0.0
    return {"max_difference": sep, "differences": diffs, "coefficients_equal": same,
            "consistent": bool(sep <= 1e-9) if same else bool(sep > 0)}
