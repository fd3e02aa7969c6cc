"""Computational grids, region masks and magnetic potentials.

The continuum domain R^n is replaced by the lattice ``h * Z^n`` restricted to
the box ``[-L, L]^n``.  Omega is the open ball of radius ``r_omega`` centred at
the origin; the two measurement windows are finite unions of axis-aligned boxes
that must stay clear of the open ball ``B_{3r}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Relative slack used when classifying lattice nodes against region boundaries.
_CLASSIFY_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when a domain description violates one of its invariants."""


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo_1, hi_1] x ... x [lo_n, hi_n]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise GeometryError("box corners have different dimensions")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise GeometryError(f"degenerate box {self.lo} > {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        lo = np.asarray(self.lo) - tol
        hi = np.asarray(self.hi) + tol
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def distance_to_origin(self) -> float:
        """Euclidean distance from the origin to the nearest point of the box."""
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        nearest = np.clip(0.0, lo, hi)
        return float(np.linalg.norm(nearest))


def _as_windows(boxes) -> tuple[Box, ...]:
    out = []
    for b in boxes:
        if isinstance(b, Box):
            out.append(b)
        else:
            lo, hi = b
            out.append(Box(tuple(np.atleast_1d(lo).astype(float)),
                           tuple(np.atleast_1d(hi).astype(float))))
    return tuple(out)


@dataclass(frozen=True)
class DomainSpec:
    """Geometric parameters of one experiment.

    Parameters
    ----------
    dim : int
        Space dimension, 1 or 2.
    half_width : float
        The truncation box is ``[-half_width, half_width]^dim``.
    h : float
        Lattice spacing; ``half_width / h`` must be an integer.
    r_omega : float
        Radius of Omega.
    r : float
        Radius of the ball containing Omega and the support of A.
    window1, window2 : sequence of Box or (lo, hi) pairs
        Control and measurement windows.
    """

    dim: int
    half_width: float
    h: float
    r_omega: float
    r: float
    window1: tuple = ()
    window2: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "window1", _as_windows(self.window1))
        object.__setattr__(self, "window2", _as_windows(self.window2))

    @property
    def n_side(self) -> int:
        return int(round(2 * self.half_width / self.h)) + 1

    def violations(self) -> list[str]:
        """Return a description of every violated invariant (empty if valid)."""
        out = []
        if self.dim not in (1, 2):
            out.append(f"dimension must be 1 or 2, got {self.dim}")
        if not self.h > 0:
            out.append(f"grid spacing h must be positive, got {self.h}")
        else:
            ratio = self.half_width / self.h
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                out.append(f"L/h must be an integer, got {ratio}")
        if not 0 < self.r_omega <= self.r:
            out.append(f"need 0 < r_omega <= r (Omega inside B_r), got "
                       f"r_omega={self.r_omega}, r={self.r}")
        if not 3 * self.r < self.half_width:
            out.append(f"need 3r < L (B_3r inside the box), got 3r={3 * self.r}, "
                       f"L={self.half_width}")
        for name, boxes in (("W1", self.window1), ("W2", self.window2)):
            for b in boxes:
                if b.dim != self.dim:
                    out.append(f"{name} box {b} has wrong dimension")
                    continue
                if b.distance_to_origin() < 3 * self.r * (1 - _CLASSIFY_TOL):
                    out.append(f"window condition violated: {name} box "
                               f"{b.lo}-{b.hi} meets B_3r with 3r={3 * self.r}")
                if (min(b.lo) < -self.half_width * (1 + _CLASSIFY_TOL)
                        or max(b.hi) > self.half_width * (1 + _CLASSIFY_TOL)):
                    out.append(f"{name} box {b.lo}-{b.hi} leaves the box "
                               f"[-{self.half_width}, {self.half_width}]^{self.dim}")
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise GeometryError("; ".join(bad))


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice over the truncation box with region masks.

    Nodes are ordered lexicographically (first coordinate slowest).  Each node
    owns the cell ``x + [-h/2, h/2]^n``; the union of the cells is the slightly
    enlarged box of half-width ``L + h/2``.
    """

    spec: DomainSpec
    points: np.ndarray
    index: np.ndarray
    interior: np.ndarray
    exterior: np.ndarray
    window1: np.ndarray
    window2: np.ndarray
    ball_r: np.ndarray
    ball_3r: np.ndarray

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def half_width(self) -> float:
        return self.spec.half_width

    @property
    def cell_half_width(self) -> float:
        return self.spec.half_width + 0.5 * self.spec.h

    @property
    def n_side(self) -> int:
        return self.spec.n_side

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.h ** self.dim)

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @property
    def exterior_idx(self) -> np.ndarray:
        return np.flatnonzero(self.exterior)

    @property
    def window1_idx(self) -> np.ndarray:
        return np.flatnonzero(self.window1)

    @property
    def window2_idx(self) -> np.ndarray:
        return np.flatnonzero(self.window2)

    def labels(self) -> np.ndarray:
        lab = np.full(self.size, "exterior", dtype=object)
        lab[self.window1] = "window1"
        lab[self.window2 & ~self.window1] = "window2"
        lab[self.interior] = "interior"
        return lab

    def identity(self) -> str:
        s = self.spec
        return (f"grid(n={s.dim},L={s.half_width!r},h={s.h!r},r_omega={s.r_omega!r},"
                f"r={s.r!r},W1={[(b.lo, b.hi) for b in s.window1]},"
                f"W2={[(b.lo, b.hi) for b in s.window2]})")

    def window_mask(self, boxes: Sequence) -> np.ndarray:
        """Mask of exterior nodes lying in an arbitrary union of boxes."""
        tol = _CLASSIFY_TOL * self.h
        mask = np.zeros(self.size, dtype=bool)
        for b in _as_windows(boxes):
            mask |= b.contains(self.points, tol)
        return mask & self.exterior

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node"] + [f"x{k + 1}" for k in range(self.dim)] + ["region"])
            for i, (p, lab) in enumerate(zip(self.points, self.labels())):
                w.writerow([i] + [f"{v:.17g}" for v in p] + [lab])


def build_grid(spec: DomainSpec) -> Grid:
    """Build the lattice of ``(2L/h + 1)^n`` nodes and classify them.

    Open sets use strict inequalities, so a node on the boundary of Omega is an
    exterior (Dirichlet data) node.
    """
    spec.validate()
    m = int(round(spec.half_width / spec.h))
    ticks = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ticks] * spec.dim), indexing="ij")
    index = np.stack([g.ravel() for g in mesh], axis=-1)
    points = index * spec.h
    radius = np.linalg.norm(points, axis=-1)
    tol = _CLASSIFY_TOL * spec.h

    interior = radius < spec.r_omega - tol
    exterior = ~interior
    w1 = np.zeros(len(points), dtype=bool)
    for b in spec.window1:
        w1 |= b.contains(points, tol)
    w2 = np.zeros(len(points), dtype=bool)
    for b in spec.window2:
        w2 |= b.contains(points, tol)
    grid = Grid(spec=spec, points=points, index=index, interior=interior,
                exterior=exterior, window1=w1 & exterior, window2=w2 & exterior,
                ball_r=radius < spec.r - tol, ball_3r=radius < 3 * spec.r - tol)
    for arr in (grid.points, grid.index, grid.interior, grid.exterior,
                grid.window1, grid.window2, grid.ball_r, grid.ball_3r):
        arr.setflags(write=False)
    if np.any((grid.window1 | grid.window2) & grid.ball_3r):
        raise GeometryError("window condition violated: window nodes inside B_3r")
    return grid


def admissibility_bound(dim: int, r: float) -> float:
    """Sup-norm cap ``pi / (8 sqrt(n) r)`` on the magnetic potential."""
    return math.pi / (8.0 * math.sqrt(dim) * r)


def smooth_bump(t):
    """``exp(1 - 1/(1 - t^2))`` on ``|t| < 1`` and 0 elsewhere; equals 1 at 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


class MagneticPotential:
    """Vector potential ``A: R^n -> R^n`` with declared support radius.

    ``evaluator`` maps an array of points of shape ``(..., n)`` to values of the
    same shape.  The potential is treated as zero outside ``B_radius``.
    """

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray], dim: int,
                 radius: float, name: str = "custom", is_zero: bool = False):
        self._evaluator = evaluator
        self.dim = dim
        self.radius = float(radius)
        self.name = name
        self.is_zero = is_zero
        self._sup = None

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.is_zero:
            return np.zeros(points.shape)
        return np.asarray(self._evaluator(points), dtype=float).reshape(points.shape)

    def __repr__(self):
        return f"MagneticPotential({self.name!r}, dim={self.dim}, radius={self.radius})"

    def identity(self) -> str:
        return f"{self.name}:{self.dim}:{self.radius!r}"

    def _samples(self, extent: float, count: int) -> np.ndarray:
        ticks = np.linspace(-extent, extent, count)
        mesh = np.meshgrid(*([ticks] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def sup_norm(self) -> float:
        """Dense-sampling estimate of ``sup_x |A(x)|`` (Euclidean length)."""
        if self._sup is None:
            if self.is_zero:
                self._sup = 0.0
            else:
                count = 4001 if self.dim == 1 else 401
                pts = self._samples(self.radius, count)
                self._sup = float(np.max(np.linalg.norm(self(pts), axis=-1)))
        return self._sup

    def max_outside_support(self, extent: float) -> float:
        """Largest ``|A(x)|`` sampled on ``r <= |x| <= extent``."""
        if self.is_zero:
            return 0.0
        count = 4001 if self.dim == 1 else 401
        pts = self._samples(extent, count)
        pts = pts[np.linalg.norm(pts, axis=-1) >= self.radius]
        if len(pts) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self(pts), axis=-1)))

    @classmethod
    def zero(cls, dim: int, radius: float = 1.0) -> "MagneticPotential":
        return cls(lambda p: np.zeros_like(p), dim, radius, name="zero", is_zero=True)

    @classmethod
    def constant_in_ball(cls, dim: int, radius: float, vector) -> "MagneticPotential":
        vec = np.broadcast_to(np.asarray(vector, dtype=float), (dim,)).copy()

        def ev(p):
            inside = np.linalg.norm(p, axis=-1) < radius
            return np.where(inside[..., None], vec, 0.0)

        return cls(ev, dim, radius, name=f"constant{tuple(vec)}")

    @classmethod
    def bump(cls, dim: int, radius: float, amplitude: float, direction=None,
             cap: bool = True) -> "MagneticPotential":
        """Smooth compactly supported bump ``amplitude * bump(|x|/r) * e``.

        With ``cap`` the amplitude is clipped to the admissibility bound.
        """
        if direction is None:
            direction = np.ones(dim)
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        if cap:
            amplitude = min(amplitude, admissibility_bound(dim, radius))

        def ev(p):
            rho = np.linalg.norm(p, axis=-1) / radius
            return amplitude * smooth_bump(rho)[..., None] * e

        return cls(ev, dim, radius, name=f"bump(amp={amplitude!r})")

    @classmethod
    def from_samples(cls, axes: Sequence[np.ndarray], values: np.ndarray,
                     radius: float) -> "MagneticPotential":
        """Piecewise-linear interpolant of samples on a tensor lattice."""
        from scipy.interpolate import RegularGridInterpolator

        dim = len(axes)
        values = np.asarray(values, dtype=float)
        interp = RegularGridInterpolator(tuple(axes), values, bounds_error=False,
                                         fill_value=0.0)

        def ev(p):
            flat = p.reshape(-1, dim)
            out = interp(flat).reshape(p.shape)
            out[np.linalg.norm(p, axis=-1) >= radius] = 0.0
            return out

        return cls(ev, dim, radius, name="samples")


@dataclass
class AdmissibilityReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, detail: str) -> None:
        self.checks[name] = (bool(passed), detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def failures(self) -> list[str]:
        return [f"{k}: {d}" for k, (ok, d) in self.checks.items() if not ok]

    def __str__(self):
        lines = [f"{'PASS' if ok else 'FAIL'} {k}: {d}" for k, (ok, d) in self.checks.items()]
        return "\n".join(lines)


def check_admissibility(spec: DomainSpec, A: MagneticPotential) -> AdmissibilityReport:
    """Check the geometric and magnitude hypotheses on Omega, A and the windows."""
    rep = AdmissibilityReport()
    rep.add("omega_in_ball", spec.r_omega <= spec.r,
            f"r_omega={spec.r_omega} <= r={spec.r}")
    leak = A.max_outside_support(spec.half_width) if A.radius <= spec.r else np.inf
    rep.add("support_in_ball", A.radius <= spec.r and leak <= 1e-14,
            f"declared support radius {A.radius}, max |A| outside B_r = {leak:.3g}")
    bound = admissibility_bound(spec.dim, spec.r)
    sup = A.sup_norm()
    rep.add("sup_norm", sup <= bound,
            f"||A||_inf = {sup:.6g} vs pi/(8 sqrt(n) r) = {bound:.6g}")
    for name, boxes in (("W1", spec.window1), ("W2", spec.window2)):
        dists = [b.distance_to_origin() for b in boxes]
        ok = bool(boxes) and all(d >= 3 * spec.r * (1 - _CLASSIFY_TOL) for d in dists)
        rep.add(f"{name}_off_B3r", ok,
                f"distances to origin {[round(d, 12) for d in dists]} vs 3r={3 * spec.r}")
    return rep
