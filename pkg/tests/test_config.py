import numpy as np
import pytest

from magcalderon.config import (DEFAULTS, ConfigError, RunConfig, field_from_expression, fmt,
                                write_csv)
from magcalderon.geometry import admissibility_bound


def test_defaults_roundtrip_through_text():
    cfg = RunConfig(dict(DEFAULTS))
    again = RunConfig.from_text(cfg.to_text())
    assert again.values == cfg.values
    assert again.hash() == cfg.hash()
    assert cfg.override(["kernel.s=0.4"]).hash() != cfg.hash()


def test_default_domain_is_the_reference_lattice():
    cfg = RunConfig(dict(DEFAULTS))
    spec = cfg.domain()
    assert spec.half_width == 6 and spec.h == 0.03
    assert len(spec.window1) == 2 and len(spec.window2) == 2
    assert cfg.potential().sup_norm() == pytest.approx(admissibility_bound(1, 1.0), rel=1e-6)
    assert cfg.rho() is None
    assert cfg.eps_ladder()[0] == 0.3


@pytest.mark.parametrize("expr, expected", [
    ("1 + x**2/2", lambda x: 1 + x ** 2 / 2),
    ("2 - x/2", lambda x: 2 - x / 2),
    ("exp(-abs(x))", lambda x: np.exp(-np.abs(x))),
    ("3", lambda x: np.full_like(x, 3.0)),
])
def test_field_expressions(expr, expected):
    x = np.linspace(-0.9, 0.9, 7)
    assert np.allclose(field_from_expression(expr, x[:, None]), expected(x))


@pytest.mark.parametrize("expr", ["__import__('os')", "x.__class__", "open('f')", "x +"])
def test_unsafe_or_bad_expressions_are_rejected(expr):
    with pytest.raises(ConfigError):
        field_from_expression(expr, np.zeros((3, 1)))


def test_model_from_configuration():
    pts = np.linspace(-0.9, 0.9, 5)[:, None]
    model = RunConfig(dict(DEFAULTS)).model(pts)
    assert model.order == 3
    assert np.allclose(model.coefficient(3), 2 - pts[:, 0] / 2)
    cfg = RunConfig(dict(DEFAULTS)).override(["model.a5=1"])
    assert cfg.model(pts).order == 5
    with pytest.raises(ConfigError):
        RunConfig(dict(DEFAULTS)).override(["model.preset=tanh"]).model(pts)


@pytest.mark.parametrize("pair", ["kernel.t=1", "noequals"])
def test_bad_overrides(pair):
    with pytest.raises(ConfigError):
        RunConfig(dict(DEFAULTS)).override([pair])


@pytest.mark.parametrize("key, value, getter", [
    ("solver.tol", "small", "get_float"),
    ("solver.max_iter", "1.5", "get_int"),
    ("potential.cap", "maybe", "get_bool"),
])
def test_typed_getters_reject_garbage(key, value, getter):
    cfg = RunConfig(dict(DEFAULTS)).override([f"{key}={value}"])
    with pytest.raises(ConfigError):
        getattr(cfg, getter)(key)


def test_bad_window_text():
    with pytest.raises(ConfigError):
        RunConfig(dict(DEFAULTS)).override(["domain.window1=3-5"]).domain()


def test_samples_potential(tmp_path):
    x = np.linspace(-1, 1, 401)
    path = tmp_path / "A.csv"
    np.savetxt(path, np.column_stack([x, 0.2 * (1 - x ** 2)]), delimiter=",")
    A = RunConfig(dict(DEFAULTS)).override([f"potential.preset=samples:{path}"]).potential()
    assert A(np.array([[0.5]]))[0, 0] == pytest.approx(0.15, abs=1e-4)


def test_environment_sets_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv("MAGCALDERON_OUTPUT", str(tmp_path))
    assert RunConfig(dict(DEFAULTS)).output_dir() == str(tmp_path / "default")


def test_csv_writer_is_exact(tmp_path):
    vals = [0.1, 1 / 3, -2.5e-17]
    sha = write_csv(tmp_path / "v.csv", ["v"], ([v] for v in vals))
    back = np.loadtxt(tmp_path / "v.csv", skiprows=1)
    assert np.array_equal(back, vals)
    assert len(sha) == 64
    assert fmt(0.1) == "0.10000000000000001"


def test_documented_example_parses():
    import pathlib
    import re

    readme = pathlib.Path(__file__).resolve().parents[1] / "README.md"
    block = re.search(r"```ini\n(.*?)```", readme.read_text(), re.S).group(1)
    cfg = RunConfig.from_text(block)
    assert cfg.values == DEFAULTS
