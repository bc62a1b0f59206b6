import numpy as np
import pytest
from hypothesis import settings

from ksns import grid as g

settings.register_profile("ci", deadline=None, max_examples=30)
settings.load_profile("ci")


@pytest.fixture
def unit_grid():
    return g.GridSpec.rectangle(16, 16)


@pytest.fixture
def l_grid():
    return g.GridSpec.l_shape(16, 16)


def random_scalar(grid, seed, bc=g.NEUMANN):
    rng = np.random.default_rng(seed)
    vals = np.where(grid.mask, rng.standard_normal((grid.nx, grid.ny)), 0.0)
    return g.ScalarField(grid, vals, bc=bc)


def random_vector(grid, seed):
    rng = np.random.default_rng(seed)
    u1 = np.where(grid.mask, rng.standard_normal((grid.nx, grid.ny)), 0.0)
    u2 = np.where(grid.mask, rng.standard_normal((grid.nx, grid.ny)), 0.0)
    return g.VectorField(grid, u1, u2)


def smooth_scalar(grid, kx=1, ky=1):
    """Neumann-compatible cosine product."""
    xx, yy = grid.meshgrid()
    vals = np.cos(kx * np.pi * xx / grid.lx) * np.cos(ky * np.pi * yy / grid.ly)
    return g.ScalarField(grid, np.where(grid.mask, vals, 0.0), bc=g.NEUMANN)


def noslip_curl_field(grid):
    """Divergence-free field from the curl of a wall-vanishing streamfunction."""
    xx, yy = grid.meshgrid()
    sx = np.sin(np.pi * xx / grid.lx)
    sy = np.sin(np.pi * yy / grid.ly)
    # psi = sx^2 sy^2; u = (psi_y, -psi_x)
    dpsi_dy = sx**2 * 2.0 * sy * np.cos(np.pi * yy / grid.ly) * np.pi / grid.ly
    dpsi_dx = sy**2 * 2.0 * sx * np.cos(np.pi * xx / grid.lx) * np.pi / grid.lx
    u1 = np.where(grid.mask, dpsi_dy, 0.0)
    u2 = np.where(grid.mask, -dpsi_dx, 0.0)
    return g.VectorField(grid, u1, u2)
