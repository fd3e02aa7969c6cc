"""Dense discretisation of the magnetic fractional operator and discrete norms.

Every node owns a cell of side h.  Row ``i`` of the fractional part represents

    2 int (u(x_i) - u(y)) K(x_i, y) dy
      ~ sum_{j != i} 2 c W_{j-i} (u_i - u_j)           (far cells, exact kernel mass)
        - (gamma / h^2) * (second differences of u at x_i)   (singular cell)
        + T(x_i) u_i                                   (mass outside the cell box)

The singular cell uses the symmetric regrouping ``2u(x) - u(x+z) - u(x-z)``.  Its
coefficient ``gamma`` is the second moment of the kernel over the singular
cell plus the moment defect of the piecewise-constant far cells, which makes
the whole row exact on quadratics.  All weights depend on ``j - i`` only, so the
matrix is symmetric and ``W M`` with ``W = h^n I`` is the Galerkin-type
bilinear matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid, MagneticPotential
from .kernel import KernelParams, lattice_moments, tail_mass

_CHUNK = 256


@dataclass(eq=False)
class NonlocalMatrix:
    """Dense node-indexed operator with the data needed to reproduce it."""

    matrix: np.ndarray
    grid: Grid
    params: KernelParams
    potential: MagneticPotential | None = None
    scheme: str = "frac-moment"
    meta: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def bilinear_matrix(self) -> np.ndarray:
        return self.weights[:, None] * self.matrix

    def apply(self, u) -> np.ndarray:
        return self.matrix @ np.asarray(u, dtype=float)

    def __matmul__(self, u):
        return self.apply(u)

    def grid_hash(self) -> str:
        return hashlib.sha256(self.grid.identity().encode()).hexdigest()[:16]

    def potential_hash(self) -> str:
        if self.potential is None:
            return "none"
        vals = np.ascontiguousarray(self.potential(self.grid.points))
        return hashlib.sha256(vals.tobytes()).hexdigest()[:16]

    def matrix_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()[:16]

    def header(self) -> dict:
        return {"n": self.params.dim, "s": repr(self.params.s), "h": repr(self.grid.h),
                "L": repr(self.grid.half_width), "scheme": self.scheme,
                "rows": self.matrix.shape[0], "cols": self.matrix.shape[1]}


# ---------------------------------------------------------------------------
# assembly

def _span(grid: Grid) -> int:
    return grid.n_side - 1


def near_field_coefficient(dim: int, s: float, span: int) -> float:
    """Unit-lattice singular-cell coefficient (multiply by ``c h^{2-2s}``)."""
    w, m2, center = lattice_moments(dim, s, span)
    if dim == 1:
        j1 = np.arange(-span, span + 1, dtype=float)
    else:
        j1 = np.arange(-span, span + 1, dtype=float)[:, None] * np.ones((1, 2 * span + 1))
    return float(center + np.sum(m2 - j1 ** 2 * w))


def magnetic_diagonal_coefficient(dim: int, s: float, span: int) -> float:
    """Unit-lattice coefficient of the magnetic diagonal (times ``c |A|^2 h^{2-2s}``).

    It is the defect between the exact second moment of the kernel over the
    cell box and its nodal (midpoint) quadrature, so that the correction rows
    are exact for the leading term ``(1 - R_A) ~ ((x - y) . A)^2 / 2``.
    """
    _, m2, center = lattice_moments(dim, s, span)
    ticks = np.arange(-span, span + 1, dtype=float)
    if dim == 1:
        j1 = ticks
        r = np.abs(ticks)
    else:
        j1 = ticks[:, None] * np.ones((1, 2 * span + 1))
        r = np.hypot(ticks[:, None], ticks[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        nodal = np.where(r > 0, j1 ** 2 * r ** (-(dim + 2 * s)), 0.0)
    return float(center + np.sum(m2) - np.sum(nodal))


def _neighbour_pairs(grid: Grid):
    """Index pairs (i, j) of lattice nearest neighbours along each axis."""
    ns = grid.n_side
    shape = (ns,) * grid.dim
    ids = np.arange(grid.size).reshape(shape)
    pairs = []
    for ax in range(grid.dim):
        a = np.take(ids, np.arange(ns - 1), axis=ax).ravel()
        b = np.take(ids, np.arange(1, ns), axis=ax).ravel()
        pairs.append((a, b))
    return pairs


def assemble_fractional(grid: Grid, params: KernelParams) -> NonlocalMatrix:
    """Assemble the discretised fractional Laplacian on the full lattice."""
    if params.dim != grid.dim:
        raise ValueError("kernel dimension does not match the grid")
    s, c, h, n = params.s, params.c, grid.h, grid.dim
    span = _span(grid)
    w, _, _ = lattice_moments(n, s, span)
    far = 2 * c * h ** (-2 * s) * w
    ns = grid.n_side
    d = np.arange(ns)[:, None] - np.arange(ns)[None, :] + span
    if n == 1:
        M = -far[d]
    else:
        M = -far[d[:, None, :, None], d[None, :, None, :]].reshape(grid.size, grid.size)
    offdiag_mass = -M.sum(axis=1)

    gamma = c * h ** (2 - 2 * s) * near_field_coefficient(n, s, span)
    for a, b in _neighbour_pairs(grid):
        M[a, b] -= gamma / h ** 2
        M[b, a] -= gamma / h ** 2

    tails = tail_mass(grid.points if n > 1 else grid.points[:, 0],
                      grid.cell_half_width, params)
    M[np.diag_indices(grid.size)] = offdiag_mass + 2 * n * gamma / h ** 2 + tails
    return NonlocalMatrix(M, grid, params, None, "frac-moment",
                          {"gamma": gamma, "span": span})


def assemble_magnetic_correction(grid: Grid, A: MagneticPotential,
                                 params: KernelParams,
                                 diagonal: str = "moment") -> NonlocalMatrix:
    """Matrix of ``u -> 2 int (1 - R_A(x, y)) u(y) K(x, y) dy``.

    Off-diagonal entries are ``h^n * correction_kernel(x_i, x_j)``.  With
    ``diagonal="moment"`` the singular cell contributes
    ``c |A(x_i)|^2 h^{2-2s} tau``; ``diagonal="zero"`` drops it.
    """
    if diagonal not in ("moment", "zero"):
        raise ValueError(f"unknown diagonal rule {diagonal!r}")
    N, n = grid.size, grid.dim
    M = np.zeros((N, N))
    if A.is_zero:
        return NonlocalMatrix(M, grid, params, A, f"corr-{diagonal}")
    s, c, h = params.s, params.c, grid.h
    pts = grid.points
    for start in range(0, N, _CHUNK):
        rows = slice(start, min(start + _CHUNK, N))
        x = pts[rows, None, :]
        diff = x - pts[None, :, :]
        phase = np.sum(diff * A((x + pts[None, :, :]) / 2), axis=-1)
        dist = np.sqrt(np.sum(diff ** 2, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = c * dist ** (-(n + 2 * s))
            block = h ** n * 2.0 * (2.0 * np.sin(0.5 * phase) ** 2) * kern
        block[dist == 0] = 0.0
        M[rows] = block
    if diagonal == "moment":
        tau = magnetic_diagonal_coefficient(n, s, _span(grid))
        a2 = np.sum(A(pts) ** 2, axis=-1)
        M[np.diag_indices(N)] = c * a2 * h ** (2 - 2 * s) * tau
    return NonlocalMatrix(M, grid, params, A, f"corr-{diagonal}")


def assemble_RsA(grid: Grid, A: MagneticPotential, params: KernelParams,
                 diagonal: str = "moment") -> NonlocalMatrix:
    """Fractional part plus magnetic correction; equals the former when A = 0."""
    frac = assemble_fractional(grid, params)
    if A.is_zero:
        return NonlocalMatrix(frac.matrix, grid, params, A, "RsA-frac-moment+zeroA",
                              dict(frac.meta, reduction=True))
    corr = assemble_magnetic_correction(grid, A, params, diagonal)
    return NonlocalMatrix(frac.matrix + corr.matrix, grid, params, A,
                          f"RsA-frac-moment+{corr.scheme}",
                          dict(frac.meta, reduction=False))


# ---------------------------------------------------------------------------
# forms and norms

def bilinear_form(u, v, M: NonlocalMatrix) -> float:
    """``v^T W M u`` with W the quadrature-weight diagonal."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    N = M.matrix.shape[0]
    if u.shape != (N,) or v.shape != (N,):
        raise ValueError(f"grid functions must have shape ({N},), got {u.shape}, {v.shape}")
    return float((v * M.weights) @ (M.matrix @ u))


class AssemblyDefect(RuntimeError):
    pass


def magnetic_seminorm(u, M: NonlocalMatrix) -> float:
    b = bilinear_form(u, u, M)
    if b < -1e-10:
        raise AssemblyDefect(f"negative quadratic form {b:.3e}")
    return float(np.sqrt(max(0.0, b)))


def l2_norm(u, grid: Grid, mask=None) -> float:
    u = np.asarray(u, dtype=float)
    if mask is not None:
        u = u[mask]
    return float(np.sqrt(grid.h ** grid.dim * np.sum(u ** 2)))


def _pair_reduce(u, points, fn, init, combine):
    acc = init
    N = len(u)
    for start in range(0, N, _CHUNK):
        rows = slice(start, min(start + _CHUNK, N))
        dist = np.sqrt(np.sum((points[rows, None, :] - points[None, :, :]) ** 2, axis=-1))
        du = u[rows, None] - u[None, :]
        acc = combine(acc, fn(du, dist))
    return acc


def gagliardo_seminorm(u, grid: Grid, s: float, mask=None) -> float:
    """``(sum_{i != j} h^{2n} |u_i - u_j|^2 / |x_i - x_j|^{n+2s})^{1/2}``."""
    u = np.asarray(u, dtype=float)
    pts = grid.points
    if mask is not None:
        u, pts = u[mask], pts[mask]
    n = grid.dim
    w2 = grid.h ** (2 * n)

    def fn(du, dist):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dist > 0, du ** 2 * dist ** (-(n + 2 * s)), 0.0)
        return w2 * float(np.sum(t))

    return float(np.sqrt(_pair_reduce(u, pts, fn, 0.0, lambda a, b: a + b)))


def holder_seminorm(u, grid: Grid, s: float, mask=None) -> float:
    """``max_{i != j} |u_i - u_j| / |x_i - x_j|^s``."""
    u = np.asarray(u, dtype=float)
    pts = grid.points
    if mask is not None:
        u, pts = u[mask], pts[mask]
    if len(u) < 2:
        return 0.0

    def fn(du, dist):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dist > 0, np.abs(du) / dist ** s, 0.0)
        return float(np.max(t))

    return _pair_reduce(u, pts, fn, 0.0, max)


def holder_norm(u, grid: Grid, s: float, mask=None) -> float:
    u = np.asarray(u, dtype=float)
    sup = float(np.max(np.abs(u[mask] if mask is not None else u), initial=0.0))
    return sup + holder_seminorm(u, grid, s, mask)


def c2_norm(u, grid: Grid) -> float:
    """``sum_{|alpha| <= 2} sup |D^alpha u|`` by centred differences.

    The function is extended by zero outside the box.
    """
    n, h = grid.dim, grid.h
    U = np.pad(np.asarray(u, dtype=float).reshape((grid.n_side,) * n), 1)
    core = (slice(1, -1),) * n

    def shifted(offsets):
        return U[tuple(slice(1 + o, U.shape[k] - 1 + o) for k, o in enumerate(offsets))]

    total = np.max(np.abs(U[core]))
    for ax in range(n):
        e = [0] * n
        e[ax] = 1
        plus, minus = shifted(e), shifted([-v for v in e])
        total += np.max(np.abs(plus - minus)) / (2 * h)
        total += np.max(np.abs(plus - 2 * U[core] + minus)) / h ** 2
    if n == 2:
        mixed = (shifted([1, 1]) - shifted([1, -1]) - shifted([-1, 1]) + shifted([-1, -1]))
        total += np.max(np.abs(mixed)) / (4 * h ** 2)
    return float(total)


def discrete_norms(u, grid: Grid, s: float) -> dict:
    u = np.asarray(u, dtype=float)
    return {
        "l2": l2_norm(u, grid),
        "hs_seminorm": gagliardo_seminorm(u, grid, s),
        "holder_seminorm": holder_seminorm(u, grid, s),
        "sup": float(np.max(np.abs(u))),
        "c2": c2_norm(u, grid),
    }


def hs_norm(u, grid: Grid, s: float) -> float:
    """Discrete ``H^s`` norm ``(||u||_2^2 + [u]_{H^s}^2)^{1/2}``."""
    return float(np.hypot(l2_norm(u, grid), gagliardo_seminorm(u, grid, s)))


# ---------------------------------------------------------------------------
# export

def save_matrix(path, M: NonlocalMatrix) -> None:
    """Write a one-line ASCII header followed by row-major little-endian float64."""
    head = " ".join(f"{k}={v}" for k, v in M.header().items())
    with open(path, "wb") as fh:
        fh.write(f"# magcalderon-matrix {head}\n".encode())
        fh.write(np.ascontiguousarray(M.matrix, dtype="<f8").tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        line = fh.readline().decode().strip()
        data = fh.read()
    fields = dict(item.split("=", 1) for item in line.split()[2:])
    arr = np.frombuffer(data, dtype="<f8").reshape(int(fields["rows"]), int(fields["cols"]))
    return fields, arr.copy()


def save_matrix_csv(path, M: NonlocalMatrix) -> None:
    head = " ".join(f"{k}={v}" for k, v in M.header().items())
    np.savetxt(path, M.matrix, fmt="%.17g", delimiter=",", header=head)
