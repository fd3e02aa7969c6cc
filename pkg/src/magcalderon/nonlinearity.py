"""Truncated Taylor models ``a(x, z) = sum_{k=1}^M a_k(x) z^k / k!``.

Coefficient fields live on the interior nodes of a grid.  The sup bound
``S_R = sup_{|z| = R} ||a(., z)||`` over the complex circle is either supplied
(closed-form presets) or bounded by the triangle inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Algebra constant of the Hoelder-norm product estimate; 1 for the sup-based
# discrete surrogate used here.
ALGEBRA_CONSTANT = 1.0
DEFAULT_RADIUS = max(4 * ALGEBRA_CONSTANT, 1.0)


class ModelError(ValueError):
    pass


@dataclass
class TaylorNonlinearity:
    """Per-node Taylor coefficients ``coeffs[k-1, i] = a_k(x_i)``.

    Parameters
    ----------
    coeffs : (M, n_interior) array
        Coefficient fields, order 1 first.
    radius : float
        Radius R of the Cauchy circle.
    sup_bound : float, optional
        ``S_R``; defaults to the certified triangle-inequality bound.
    positivity : float, optional
        Lower bound c for ``a_1``; defaults to ``min a_1`` which must be > 0.
    """

    coeffs: np.ndarray
    radius: float = DEFAULT_RADIUS
    sup_bound: float | None = None
    positivity: float | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape[0] < 1:
            raise ModelError("need at least the first-order coefficient")
        a1 = self.coeffs[0]
        c = float(np.min(a1)) if self.positivity is None else float(self.positivity)
        if not c > 0 or np.any(a1 < c):
            raise ModelError(f"need a_1 >= c > 0, got min a_1 = {np.min(a1):.6g}, c = {c}")
        self.positivity = c
        if self.sup_bound is None:
            self.sup_bound = self.certified_sup_bound()
        k = np.arange(1, self.order + 1)
        self._scaled = self.coeffs / np.array([math.factorial(int(j)) for j in k])[:, None]

    @property
    def order(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.coeffs.shape[1]

    def coefficient(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.order:
            return np.zeros(self.n_nodes)
        return self.coeffs[k - 1]

    def _node(self, node):
        if node is None:
            return slice(None)
        if not 0 <= node < self.n_nodes:
            raise ModelError(f"node {node} is not an interior node")
        return node

    # Horner on b_k = a_k / k!; z may be a scalar or an array matching the nodes
    def value(self, z, node=None):
        """``a(x, z)``; with ``node=None`` z is a vector over interior nodes."""
        sl = self._node(node)
        b = self._scaled[:, sl]
        acc = np.zeros(np.broadcast(b[0], z).shape)
        for k in range(self.order - 1, -1, -1):
            acc = acc * z + b[k]
        return acc * z

    def dz(self, z, node=None):
        """``d/dz a(x, z) = sum a_k z^{k-1} / (k-1)!``."""
        sl = self._node(node)
        b = self._scaled[:, sl]
        acc = np.zeros(np.broadcast(b[0], z).shape)
        for k in range(self.order - 1, -1, -1):
            acc = acc * z + (k + 1) * b[k]
        return acc

    def partial_sum(self, z, m: int, node=None):
        sl = self._node(node)
        b = self._scaled[:min(m, self.order), sl]
        acc = np.zeros(np.broadcast(b[0], z).shape)
        for k in range(b.shape[0] - 1, -1, -1):
            acc = acc * z + b[k]
        return acc * z

    def remainder(self, z, m: int, node=None):
        """``R_m(x, z) = sum_{k=m+1}^M a_k z^k / k!`` summed directly."""
        if not 1 <= m < self.order:
            if m >= self.order:
                raise ModelError(f"remainder order m={m} must be below M={self.order}")
            raise ModelError("remainder order must be >= 1")
        sl = self._node(node)
        b = self._scaled[m:, sl]
        acc = np.zeros(np.broadcast(b[0], z).shape)
        for k in range(b.shape[0] - 1, -1, -1):
            acc = acc * z + b[k]
        return acc * np.asarray(z, dtype=float) ** (m + 1)

    def remainder_dz(self, z, m: int = 1, node=None):
        """``d/dz R_m(x, z)``."""
        sl = self._node(node)
        k = np.arange(m + 1, self.order + 1)
        acc = np.zeros(np.broadcast(self._scaled[0, sl], z).shape)
        for j in range(len(k) - 1, -1, -1):
            acc = acc * z + k[j] * self._scaled[k[j] - 1, sl]
        return acc * np.asarray(z, dtype=float) ** m

    def certified_sup_bound(self, radius: float | None = None) -> float:
        R = self.radius if radius is None else radius
        k = np.arange(1, self.order + 1)
        norms = np.max(np.abs(self.coeffs), axis=1)
        return float(np.sum(norms * R ** k / np.array([math.factorial(int(j)) for j in k])))

    def sampled_sup_bound(self, radius: float | None = None, samples: int = 2048) -> float:
        """Maximum of ``|a(x, z)|`` over nodes and sampled ``|z| = R``."""
        R = self.radius if radius is None else radius
        z = R * np.exp(2j * np.pi * np.arange(samples) / samples)
        acc = np.zeros((samples, self.n_nodes), dtype=complex)
        for k in range(self.order - 1, -1, -1):
            acc = acc * z[:, None] + self._scaled[k][None, :]
        return float(np.max(np.abs(acc * z[:, None])))

    def with_coeffs(self, coeffs, **kw) -> "TaylorNonlinearity":
        args = dict(radius=self.radius, name=self.name)
        args.update(kw)
        return TaylorNonlinearity(np.asarray(coeffs, dtype=float), **args)


def eval_a(model: TaylorNonlinearity, node: int, z):
    return model.value(z, node)


def eval_dz_a(model: TaylorNonlinearity, node: int, z):
    return model.dz(z, node)


def eval_remainder(model: TaylorNonlinearity, node: int, z, m: int):
    return model.remainder(z, m, node)


def tail_bound(model: TaylorNonlinearity, m: int, u_norm: float) -> dict:
    """Geometric-series bounds on the order-m tail and its z-derivative.

    ``sum_{k>m} 2^{-k} = 2^{-m}`` and ``sum_{k>m} k 2^{1-k} = (m + 2) 2^{1-m}``.
    """
    if u_norm > 1:
        raise ModelError(f"tail bounds need ||u|| <= 1, got {u_norm}")
    if m < 0:
        raise ModelError("order must be nonnegative")
    S = model.sup_bound
    geo = 2.0 ** (-m)
    geo_d = (m + 2) * 2.0 ** (1 - m)
    return {"bound_R": geo * S * u_norm ** (m + 1),
            "bound_dR": geo_d * S * u_norm ** m,
            "series_R": geo, "series_dR": geo_d}


def cauchy_decay_check(model: TaylorNonlinearity) -> dict:
    """Compare ``||a_k||_sup`` with ``k! S_R / R^k`` for every stored order."""
    R, S = model.radius, model.sup_bound
    ratios = []
    for k in range(1, model.order + 1):
        allowed = math.factorial(k) * S / R ** k
        actual = float(np.max(np.abs(model.coefficient(k))))
        ratios.append(actual / allowed if allowed > 0 else (np.inf if actual > 0 else 0.0))
    worst = int(np.argmax(ratios)) + 1
    return {"passed": bool(max(ratios) <= 1.0), "ratios": ratios,
            "worst_order": worst, "worst_ratio": float(max(ratios)),
            "radius": R, "sup_bound": S}


# ---------------------------------------------------------------------------
# presets

def polynomial(fields) -> TaylorNonlinearity:
    """Model with the given coefficient fields ``[a_1, a_2, ...]``."""
    return TaylorNonlinearity(np.asarray(fields, dtype=float), name="polynomial")


def linear(a1) -> TaylorNonlinearity:
    return TaylorNonlinearity(np.atleast_2d(np.asarray(a1, dtype=float)), name="linear")


def scaled_expm1(scale, order: int = 8, radius: float = DEFAULT_RADIUS) -> TaylorNonlinearity:
    """``a(x, z) = b(x) (e^z - 1)``: every coefficient equals b."""
    b = np.asarray(scale, dtype=float)
    coeffs = np.tile(b, (order, 1))
    S = float(np.max(np.abs(b))) * (math.exp(radius) - 1.0)
    return TaylorNonlinearity(coeffs, radius=radius, sup_bound=S, name="expm1")


def scaled_sin(scale, order: int = 8, radius: float = DEFAULT_RADIUS) -> TaylorNonlinearity:
    """``a(x, z) = b(x) sin z``: coefficients b, 0, -b, 0, b, ..."""
    b = np.asarray(scale, dtype=float)
    pattern = [1.0, 0.0, -1.0, 0.0]
    coeffs = np.array([pattern[k % 4] * b for k in range(order)])
    S = float(np.max(np.abs(b))) * math.sinh(radius)
    return TaylorNonlinearity(coeffs, radius=radius, sup_bound=S, name="sin")
