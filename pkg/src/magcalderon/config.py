"""Run configuration: INI text with dotted keys, plus CSV/manifest writers.

A configuration file looks like::

    [domain]
    dim = 1
    half_width = 6
    h = 0.03
    r_omega = 1
    r = 1
    window1 = 3:5, -6:-4.5
    window2 = 5.25:6, -4.25:-3

    [kernel]
    s = 0.5

    [potential]
    preset = bump
    amplitude = 10

    [model]
    preset = polynomial
    a1 = 1 + x**2/2
    a2 = 1 + 0.5*cos(pi*x/2)

Section ``[a]`` with key ``b`` is addressed as ``a.b``.  Window boxes are
``lo:hi`` pairs separated by commas; in 2D each corner is ``x y``, for
example ``3 -1:4 1``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, DomainSpec, GeometryError, MagneticPotential
from .kernel import KernelParams
from .nonlinearity import TaylorNonlinearity, linear, polynomial, scaled_expm1, scaled_sin

OUTPUT_ENV = "MAGCALDERON_OUTPUT"

DEFAULTS = {
    "domain.dim": "1",
    "domain.half_width": "6",
    "domain.h": "0.03",
    "domain.r_omega": "1",
    "domain.r": "1",
    "domain.window1": "3:5, -6:-4.5",
    "domain.window2": "5.25:6, -4.25:-3",
    "kernel.s": "0.5",
    "potential.preset": "bump",
    "potential.amplitude": "10",
    "potential.cap": "yes",
    "model.preset": "polynomial",
    "model.a1": "1 + x**2/2",
    "model.a2": "1 + 0.5*cos(pi*x/2)",
    "model.a3": "2 - x/2",
    "solver.rho": "auto",
    "solver.tol": "1e-10",
    "solver.max_iter": "200",
    "data.preset": "bump",
    "data.scale": "0.5",
    "data.count": "10",
    "inverse.eps_ladder": "0.3, 0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.025",
    "inverse.runge_lambda": "auto",
    "inverse.reconstruction_lambda": "1e-10",
    "inverse.L_target": "3",
    "inverse.mode": "oracle-interior",
    "inverse.truth": "yes",
    "inverse.gate": "0.1",
    "inverse.noise": "0",
    "run.seed": "0",
    "run.output": "runs",
    "run.name": "default",
}


class ConfigError(ValueError):
    pass


_SAFE_NAMES = {
    "pi": math.pi, "e": math.e, "sin": np.sin, "cos": np.cos, "exp": np.exp,
    "tanh": np.tanh, "sqrt": np.sqrt, "abs": np.abs, "log1p": np.log1p,
}


def field_from_expression(expr: str, points: np.ndarray) -> np.ndarray:
    """Evaluate an arithmetic expression in ``x`` (and ``y`` in 2D) at points."""
    names = dict(_SAFE_NAMES)
    names["x"] = points[:, 0]
    if points.shape[1] > 1:
        names["y"] = points[:, 1]
        names["r"] = np.linalg.norm(points, axis=1)
    else:
        names["r"] = np.abs(points[:, 0])
    try:
        code = compile(expr, "<field>", "eval")
        for name in code.co_names:
            if name not in names:
                raise ConfigError(f"unknown name {name!r} in expression {expr!r}")
        val = eval(code, {"__builtins__": {}}, names)  # noqa: S307
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc.msg}") from exc
    return np.broadcast_to(np.asarray(val, dtype=float), (len(points),)).copy()


def _parse_windows(text: str, dim: int):
    boxes = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            lo, hi = part.split(":")
            lo = tuple(float(v) for v in lo.split())
            hi = tuple(float(v) for v in hi.split())
        except ValueError as exc:
            raise ConfigError(f"bad window box {part!r}; expected lo:hi") from exc
        if len(lo) != dim or len(hi) != dim:
            raise ConfigError(f"window box {part!r} does not have dimension {dim}")
        boxes.append(Box(lo, hi))
    return tuple(boxes)


def _floats(text: str):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


@dataclass
class RunConfig:
    """Flat dotted-key view of a run configuration."""

    values: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        vals = dict(DEFAULTS)
        for sec in parser.sections():
            for key, value in parser.items(sec):
                dotted = f"{sec}.{key}"
                if dotted not in DEFAULTS and not dotted.startswith("model.a"):
                    raise ConfigError(f"unknown configuration key {dotted!r}")
                vals[dotted] = value.strip()
        return cls(vals)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def override(self, pairs) -> "RunConfig":
        vals = dict(self.values)
        for item in pairs or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like key=value")
            k, v = item.split("=", 1)
            k = k.strip()
            if k not in DEFAULTS and not k.startswith("model.a"):
                raise ConfigError(f"unknown configuration key {k!r}")
            vals[k] = v.strip()
        return RunConfig(vals)

    def __getitem__(self, key):
        return self.values[key]

    def get_float(self, key) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from exc

    def get_int(self, key) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from exc

    def get_bool(self, key) -> bool:
        v = self.values[key].lower()
        if v in ("1", "yes", "true", "on"):
            return True
        if v in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"{key} must be yes/no, got {self.values[key]!r}")

    def to_text(self) -> str:
        sections = {}
        for k in sorted(self.values):
            sec, key = k.split(".", 1)
            sections.setdefault(sec, []).append(f"{key} = {self.values[k]}")
        return "\n".join(f"[{sec}]\n" + "\n".join(lines) + "\n" for sec, lines in sections.items())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    # derived objects --------------------------------------------------------

    def domain(self) -> DomainSpec:
        dim = self.get_int("domain.dim")
        spec = DomainSpec(dim, self.get_float("domain.half_width"), self.get_float("domain.h"),
                          self.get_float("domain.r_omega"), self.get_float("domain.r"),
                          _parse_windows(self["domain.window1"], dim),
                          _parse_windows(self["domain.window2"], dim))
        try:
            spec.validate()
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc
        return spec

    def kernel(self) -> KernelParams:
        try:
            return KernelParams(self.get_int("domain.dim"), self.get_float("kernel.s"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def potential(self) -> MagneticPotential:
        dim = self.get_int("domain.dim")
        r = self.get_float("domain.r")
        preset = self["potential.preset"]
        if preset == "zero":
            return MagneticPotential.zero(dim, r)
        if preset in ("bump", "gaussian-bump"):
            return MagneticPotential.bump(dim, r, self.get_float("potential.amplitude"),
                                          cap=self.get_bool("potential.cap"))
        if preset == "constant":
            return MagneticPotential.constant_in_ball(dim, r, self.get_float("potential.amplitude"))
        if preset.startswith("samples:"):
            return _potential_from_csv(preset.split(":", 1)[1], dim, r)
        raise ConfigError(f"unknown potential preset {preset!r}")

    def model(self, interior_points: np.ndarray) -> TaylorNonlinearity:
        preset = self["model.preset"]
        keys = sorted((k for k in self.values if k.startswith("model.a") and k[7:].isdigit()),
                      key=lambda k: int(k[7:]))
        fields = {int(k[7:]): field_from_expression(self[k], interior_points) for k in keys}
        try:
            if preset == "polynomial":
                order = max(fields) if fields else 1
                coeffs = [fields.get(k, np.zeros(len(interior_points)))
                          for k in range(1, order + 1)]
                return polynomial(coeffs)
            if preset == "linear":
                return linear(fields[1])
            if preset in ("expm1", "sin"):
                fn = scaled_expm1 if preset == "expm1" else scaled_sin
                return fn(fields[1])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"model preset {preset!r}: {exc}") from exc
        raise ConfigError(f"unknown model preset {preset!r}")

    def rho(self):
        v = self["solver.rho"]
        return None if v == "auto" else self.get_float("solver.rho")

    def eps_ladder(self):
        eps = _floats(self["inverse.eps_ladder"])
        if not eps:
            raise ConfigError("inverse.eps_ladder is empty")
        return eps

    def output_dir(self) -> str:
        root = os.environ.get(OUTPUT_ENV, self["run.output"])
        return os.path.join(root, self["run.name"])


def _potential_from_csv(path, dim, radius) -> MagneticPotential:
    """Samples on a tensor lattice: columns x[, y], A1[, A2]."""
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read potential samples {path!r}") from exc
    if data.shape[1] != 2 * dim:
        raise ConfigError(f"potential samples need {2 * dim} columns")
    axes = [np.unique(data[:, k]) for k in range(dim)]
    shape = tuple(len(a) for a in axes)
    order = np.lexsort(tuple(data[:, k] for k in reversed(range(dim))))
    vals = data[order, dim:].reshape(shape + (dim,))
    return MagneticPotential.from_samples(axes, vals, radius)


# ---------------------------------------------------------------------------
# writers

def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows) -> str:
    """Write rows with 17 significant digits; return the file's sha256."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return file_hash(path)


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_manifest(path, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def solution_rows(grid, u):
    labels = grid.labels()
    for k in range(grid.size):
        yield (k, *grid.points[k], labels[k], u[k])


def solution_header(grid):
    return ["node", *("x", "y")[:grid.dim], "region", "u"]
