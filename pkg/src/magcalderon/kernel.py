"""Singular kernel, magnetic weight, correction kernel and truncation tails.

Convention: the operator is ``2 * PV int (u(x) - R_A(x, y) u(y)) K(x, y) dy`` with
``K(x, y) = c_{n,s} |x - y|^{-(n+2s)}``.  ``c_{n,s}`` is half of the usual
fractional-Laplacian constant so that the factor 2 reproduces the Fourier
symbol ``|xi|^{2s}`` when ``A = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special


def normalization_constant(n: int, s: float) -> float:
    """``c_{n,s} = 2^{2s-1} Gamma(n/2 + s) / (pi^{n/2} |Gamma(-s)|)``."""
    if not 0 < s < 1:
        raise ValueError(f"fractional power must lie in (0, 1), got {s}")
    return (2.0 ** (2 * s - 1) * math.gamma(n / 2 + s)
            / (math.pi ** (n / 2) * abs(math.gamma(-s))))


@dataclass(frozen=True)
class KernelParams:
    dim: int
    s: float

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise ValueError(f"fractional power must lie in (0, 1), got {self.s}")
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")

    @property
    def c(self) -> float:
        return normalization_constant(self.dim, self.s)

    @property
    def exponent(self) -> float:
        return self.dim + 2 * self.s


def kernel_K(x, y, params: KernelParams):
    """``c_{n,s} |x - y|^{-(n+2s)}``; raises on coincident points."""
    d = np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float)), axis=-1)
    if np.any(d == 0):
        raise ValueError("kernel is singular at x = y")
    return params.c * d ** (-params.exponent)


def _phase(x, y, A):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if y.ndim == 0:
        y = y[None]
    mid = (x + y) / 2
    return np.sum((x - y) * A(mid), axis=-1)


def magnetic_weight(x, y, A):
    """``R_A(x, y) = cos((x - y) . A((x + y)/2))``, exactly symmetric in x, y."""
    return np.cos(_phase(x, y, A))


def correction_kernel(x, y, A, params: KernelParams):
    """``2 (1 - R_A(x, y)) K(x, y)``, extended by 0 on the diagonal.

    ``1 - R_A`` is evaluated as ``2 sin^2(phase/2)`` to avoid cancellation.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = np.atleast_1d(x - y)
    d = np.linalg.norm(diff, axis=-1)
    one_minus = 2.0 * np.sin(0.5 * _phase(x, y, A)) ** 2
    safe = np.where(d > 0, d, 1.0)
    val = 2.0 * one_minus * params.c * safe ** (-params.exponent)
    return np.where(d > 0, val, 0.0)


def tail_mass(x, half_width: float, params: KernelParams):
    """``2 int_{R^n \\ [-H, H]^n} K(x, y) dy`` for x strictly inside the box.

    In 1D this is elementary.  In 2D the radial integral is done analytically
    and the angular integral over each box side reduces to an incomplete beta
    function, so both cases are closed forms.
    """
    x = np.asarray(x, dtype=float)
    n, s, c = params.dim, params.s, params.c
    pts = x.reshape(-1, n) if n > 1 or x.ndim > 0 else x.reshape(-1, 1)
    if np.any(np.abs(pts) >= half_width):
        raise ValueError("tail_mass needs x strictly inside the open box")
    if n == 1:
        p = pts[:, 0]
        out = 2 * c * ((half_width - p) ** (-2 * s) + (half_width + p) ** (-2 * s)) / (2 * s)
    else:
        out = 2 * c * _angular_tail_2d(pts, half_width, s) / (2 * s)
    if x.ndim == 0 or (n > 1 and x.ndim == 1):
        return float(out[0])
    return out


def _cos_power_integral(phi, s):
    """``int_0^phi cos^{2s}(t) dt`` for ``|phi| < pi/2`` (odd in phi)."""
    t = np.sin(phi) ** 2
    val = 0.5 * special.betainc(0.5, s + 0.5, t) * special.beta(0.5, s + 0.5)
    return np.sign(phi) * val


def _angular_tail_2d(pts, H, s):
    """``int_0^{2 pi} rho(theta)^{-2s} d theta`` with rho the exit distance."""
    total = np.zeros(len(pts))
    x1, x2 = pts[:, 0], pts[:, 1]
    # (perpendicular distance, tangential offsets of the side's endpoints)
    sides = [
        (H - x1, -H - x2, H - x2),
        (H + x1, -H - x2, H - x2),
        (H - x2, -H - x1, H - x1),
        (H + x2, -H - x1, H - x1),
    ]
    for d, t1, t2 in sides:
        phi1 = np.arctan(t1 / d)
        phi2 = np.arctan(t2 / d)
        total += d ** (-2 * s) * (_cos_power_integral(phi2, s) - _cos_power_integral(phi1, s))
    return total


# ---------------------------------------------------------------------------
# unit-lattice cell moments (h = 1, c = 1); rescaled by the operator module

def _gauss_cell(center, power, second_moment, order=8, split=1):
    """Integrate ``|z|^{-power}`` (optionally times z_1^2) over a unit cell."""
    nodes, wts = np.polynomial.legendre.leggauss(order)
    sub = (np.arange(split) + 0.5) / split - 0.5
    pts = (sub[:, None] + nodes[None, :] / (2 * split)).ravel()
    w = np.tile(wts / (2 * split), split)
    z1 = center[0] + pts[:, None]
    z2 = center[1] + pts[None, :]
    r2 = z1 ** 2 + z2 ** 2
    f = r2 ** (-power / 2)
    if second_moment:
        f = f * z1 ** 2
    return float(w @ f @ w)


def _unit_center_second_moment_2d(s):
    """``int_{[-1/2,1/2]^2} z_1^2 |z|^{-2-2s} dz`` in polar form."""
    from scipy import integrate

    def rho(theta):
        return 0.5 / max(abs(math.cos(theta)), abs(math.sin(theta)))

    # reflecting the octant [pi/4, pi/2] onto [0, pi/4] turns cos^2 into sin^2,
    # so each quadrant contributes int_0^{pi/4} rho^{2-2s}
    val, _ = integrate.quad(lambda t: rho(t) ** (2 - 2 * s), 0, math.pi / 4,
                            epsabs=0, epsrel=1e-13, limit=200)
    return 4 * val / (2 - 2 * s)


@lru_cache(maxsize=32)
def lattice_moments(dim: int, s: float, span: int):
    """Unit-lattice cell integrals for offsets ``|j|_inf <= span``.

    Returns ``(weights, second, center_second)`` where ``weights[j]`` is the
    integral of ``|z|^{-n-2s}`` over the unit cell centred at offset ``j``,
    ``second[j]`` the integral of ``z_1^2 |z|^{-n-2s}`` over the same cell, and
    ``center_second`` the latter over the singular cell at the origin.  Arrays
    are indexed by ``j + span`` along each axis; the origin entry of
    ``weights`` is 0.
    """
    p = dim + 2 * s
    if dim == 1:
        k = np.arange(-span, span + 1, dtype=float)
        a = np.abs(k) - 0.5
        b = np.abs(k) + 0.5
        with np.errstate(divide="ignore", invalid="ignore"):
            w = (a ** (-2 * s) - b ** (-2 * s)) / (2 * s)
            m2 = (b ** (2 - 2 * s) - a ** (2 - 2 * s)) / (2 - 2 * s)
        w[span] = 0.0
        m2[span] = 0.0
        center = 2 * 0.5 ** (2 - 2 * s) / (2 - 2 * s)
        return w, m2, center
    size = 2 * span + 1
    w = np.zeros((size, size))
    m2 = np.zeros((size, size))
    # the table is symmetric under reflections and (for w) the swap of axes
    for a in range(span + 1):
        for b in range(span + 1):
            if a == 0 and b == 0:
                continue
            near = max(a, b)
            split = 8 if near <= 2 else (4 if near <= 6 else 1)
            order = 8 if near <= 20 else 4
            w_ab = _gauss_cell((a, b), p, False, order, split)
            m_ab = _gauss_cell((a, b), p, True, order, split)
            for sa in {a, -a}:
                for sb in {b, -b}:
                    w[sa + span, sb + span] = w_ab
                    m2[sa + span, sb + span] = m_ab
    center = _unit_center_second_moment_2d(s)
    return w, m2, center
