import math

import numpy as np
import pytest

from magcalderon.geometry import (Box, DomainSpec, GeometryError, MagneticPotential,
                                  admissibility_bound, build_grid, check_admissibility,
                                  smooth_bump)

from conftest import make_grid


def test_node_count_and_spacing():
    grid = make_grid(1, 3.5, 0.125)
    assert grid.size == 57
    assert np.allclose(np.diff(grid.points[:, 0]), 0.125)
    grid2 = make_grid(2, 3.5, 0.5)
    assert grid2.size == 15 ** 2


def test_regions_are_a_partition():
    grid = make_grid(2, 3.5, 0.25)
    assert np.all(grid.interior ^ grid.exterior)
    assert not np.any(grid.window1 & grid.interior)
    assert not np.any((grid.window1 | grid.window2) & grid.ball_3r)
    r = np.linalg.norm(grid.points, axis=1)
    assert np.all(r[grid.interior] < 1)


def test_boundary_node_is_exterior():
    grid = make_grid(1, 3.5, 0.125)
    k = int(np.argmin(np.abs(grid.points[:, 0] - 1.0)))
    assert grid.exterior[k]


@pytest.mark.parametrize("kw, message", [
    (dict(h=0.3), "L/h must be an integer"),
    (dict(half_width=2.0, h=0.25), "need 3r < L"),
    (dict(r_omega=1.5), "r_omega <= r"),
    (dict(window1=[((2.0,), (3.2,))]), "window condition violated"),
])
def test_spec_violations(kw, message):
    args = dict(dim=1, half_width=3.5, h=0.125, r_omega=1.0, r=1.0,
                window1=[((3.0,), (3.5,))], window2=[((-3.5,), (-3.0,))])
    args.update(kw)
    spec = DomainSpec(**args)
    assert any(message in v for v in spec.violations())
    with pytest.raises(GeometryError):
        build_grid(spec)


def test_box_validation():
    with pytest.raises(GeometryError):
        Box((1.0,), (0.0,))
    assert Box((3.0, -1.0), (4.0, 1.0)).distance_to_origin() == pytest.approx(3.0)


def test_admissibility_bound_value():
    assert admissibility_bound(1, 1.0) == pytest.approx(math.pi / 8)
    assert admissibility_bound(2, 0.5) == pytest.approx(math.pi / (4 * math.sqrt(2)))


def test_bump_is_capped_and_admissible():
    grid = make_grid(1)
    A = MagneticPotential.bump(1, 1.0, 100.0)
    assert A.sup_norm() == pytest.approx(admissibility_bound(1, 1.0), rel=1e-6)
    rep = check_admissibility(grid.spec, A)
    assert rep.passed, str(rep)


def test_uncapped_potential_is_rejected():
    grid = make_grid(2, 3.5, 0.5)
    A = MagneticPotential.constant_in_ball(2, 1.0, [1.0, 0.0])
    rep = check_admissibility(grid.spec, A)
    assert not rep.passed
    assert any("pi/(8 sqrt(n) r)" in f for f in rep.failures())


def test_support_leak_is_detected():
    grid = make_grid(1)
    A = MagneticPotential(lambda p: 0.1 * np.ones_like(p), 1, 1.0)
    assert "support_in_ball" in " ".join(check_admissibility(grid.spec, A).failures())


def test_smooth_bump_values():
    t = np.array([-1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
    out = smooth_bump(t)
    assert out[2] == 1.0
    assert out[0] == out[4] == out[5] == 0.0
    assert out[1] == pytest.approx(math.exp(1 - 1 / 0.75))


def test_potential_from_samples_matches_bump():
    ticks = np.linspace(-1, 1, 2001)
    vals = 0.3 * smooth_bump(ticks)[:, None]
    A = MagneticPotential.from_samples([ticks], vals, 1.0)
    x = np.array([[-0.4], [0.0], [0.7], [1.5]])
    expected = 0.3 * smooth_bump(x[:, 0])
    assert np.allclose(A(x)[:, 0], expected, atol=1e-6)


def test_csv_export(tmp_path):
    grid = make_grid(1)
    grid.to_csv(tmp_path / "grid.csv")
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert lines[0] == "node,x1,region"
    assert len(lines) == grid.size + 1


@pytest.mark.parametrize("h, interior", [(1.0, [0.0]), (0.5, [-0.5, 0.0, 0.5])])
def test_interior_nodes_on_coarse_lattice(h, interior):
    grid = build_grid(DomainSpec(1, 8.0, h, 1.0, 1.0))
    assert grid.size == int(16 / h) + 1
    assert grid.points[grid.interior, 0].tolist() == interior


def test_window_inside_ball_is_rejected_in_2d():
    spec = DomainSpec(2, 4.0, 1.0, 1.0, 1.0, [((1.0, -1.0), (2.0, 1.0))], [((3.5, 3.5), (4.0, 4.0))])
    with pytest.raises(GeometryError, match="window condition"):
        build_grid(spec)


def _spec_r2(window1):
    return DomainSpec(1, 8.0, 0.5, 1.0, 2.0, window1, [((-7.5,), (-6.5,))])


def test_zero_potential_passes_every_check():
    rep = check_admissibility(_spec_r2([((6.5,), (7.5,))]), MagneticPotential.zero(1))
    assert rep.passed
    assert all(ok for ok, _ in rep.checks.values())


def test_sup_norm_check_fails_just_above_bound():
    amp = admissibility_bound(1, 2.0) * 1.01
    A = MagneticPotential.constant_in_ball(1, 2.0, [amp])
    rep = check_admissibility(_spec_r2([((6.5,), (7.5,))]), A)
    assert not rep.passed
    failed = [k for k, (ok, _) in rep.checks.items() if not ok]
    assert len(failed) == 1 and "sup" in failed[0]


@pytest.mark.parametrize("window, ok", [([((6.5,), (7.5,))], True), ([((5.0,), (6.0,))], False)])
def test_window_against_open_ball(window, ok):
    rep = check_admissibility(_spec_r2(window), MagneticPotential.zero(1))
    assert rep.passed is ok


@pytest.mark.parametrize("dim, h", [(1, 0.25), (2, 0.5)])
def test_masks_refine_monotonically(dim, h):
    coarse, fine = make_grid(dim, 3.5, h), make_grid(dim, 3.5, h / 2)
    key = lambda p: tuple(np.round(p / (h / 2)).astype(int))
    lookup = {key(p): k for k, p in enumerate(fine.points)}
    shared = np.array([lookup[key(p)] for p in coarse.points])
    for name in ("interior", "exterior", "window1", "window2"):
        assert np.array_equal(getattr(coarse, name), getattr(fine, name)[shared]), name
