import numpy as np
import pytest

from magcalderon import experiments as ex
from magcalderon.geometry import DomainSpec, MagneticPotential, build_grid
from magcalderon.kernel import KernelParams
from magcalderon.operator import assemble_RsA


@pytest.fixture(scope="session")
def reference():
    """The 1D reference setup (N = 401, s = 1/2, capped bump potential)."""
    return ex.reference_setup()


@pytest.fixture(scope="session")
def small():
    """A coarse 1D setup for quick solver tests."""
    return ex.reference_setup(n_nodes=161)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_grid(dim=1, L=3.5, h=0.125, windows=True):
    if dim == 1:
        w1 = [((3.0,), (3.5,))] if windows else []
        w2 = [((-3.5,), (-3.0,))] if windows else []
    else:
        w1 = [((3.0, -0.5), (3.5, 0.5))] if windows else []
        w2 = [((-3.5, -0.5), (-3.0, 0.5))] if windows else []
    return build_grid(DomainSpec(dim, L, h, 1.0, 1.0, w1, w2))


def make_operator(dim=1, s=0.5, h=0.125, amplitude=10.0, L=3.5):
    grid = make_grid(dim, L, h)
    A = (MagneticPotential.zero(dim) if amplitude == 0
         else MagneticPotential.bump(dim, 1.0, amplitude))
    return assemble_RsA(grid, A, KernelParams(dim, s))
