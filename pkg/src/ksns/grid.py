"""Structured 2D cell-centered grids, masked domains, and discrete operators.

Fields live at cell centers x_i = (i + 1/2) hx, y_j = (j + 1/2) hy with array
shape (nx, ny).  Boundary conditions are realized through ghost closures at
every face whose neighbor cell is outside the mask (or outside the grid):

  * Neumann-zero scalars mirror the inside value across the face, so the
    discrete normal difference at the face is exactly zero.
  * Dirichlet(g) scalars extrapolate 2 g - inside through the face value g.
  * No-slip vector components negate the inside value, so the face value
    (arithmetic mean) is exactly zero.

Non-convex domains are staircase masks; the same closure applies at interior
mask boundaries, so masked and unmasked rectangles share one code path.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
NOSLIP = "noslip"


class GridSpec:
    """Geometry of a structured cell-centered grid with an inside/outside mask."""

    def __init__(self, nx, ny, lx=1.0, ly=1.0, mask=None):
        if nx < 4 or ny < 4:
            raise InvalidInputError(f"grid must be at least 4x4, got {nx}x{ny}")
        if lx <= 0 or ly <= 0:
            raise InvalidInputError("domain extents must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.lx = float(lx)
        self.ly = float(ly)
        self.hx = self.lx / self.nx
        self.hy = self.ly / self.ny
        if mask is None:
            mask = np.ones((self.nx, self.ny), dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.nx, self.ny):
            raise InvalidInputError(f"mask shape {mask.shape} != grid shape {(self.nx, self.ny)}")
        self.mask = mask
        self._validate_mask()
        self.cell_area = self.hx * self.hy
        self.x = (np.arange(self.nx) + 0.5) * self.hx
        self.y = (np.arange(self.ny) + 0.5) * self.hy
        # factorization/assembly cache used by the elliptic solvers
        self._solver_cache = {}

    def _validate_mask(self):
        if not self.mask.any():
            raise InvalidInputError("mask has no inside cells")
        _, count = ndimage.label(self.mask)
        if count != 1:
            raise InvalidInputError(f"mask must be a single connected region, found {count}")
        neighbors = np.zeros(self.mask.shape, dtype=int)
        neighbors[:-1, :] += self.mask[1:, :]
        neighbors[1:, :] += self.mask[:-1, :]
        neighbors[:, :-1] += self.mask[:, 1:]
        neighbors[:, 1:] += self.mask[:, :-1]
        if np.any(self.mask & (neighbors == 0)):
            raise InvalidInputError("mask contains an isolated cell")

    @classmethod
    def rectangle(cls, nx, ny, lx=1.0, ly=1.0):
        return cls(nx, ny, lx, ly)

    @classmethod
    def l_shape(cls, nx, ny, lx=1.0, ly=1.0):
        """Rectangle with the open upper-right quadrant removed (3/4 coverage)."""
        xc = (np.arange(nx) + 0.5) * (lx / nx)
        yc = (np.arange(ny) + 0.5) * (ly / ny)
        mask = ~((xc[:, None] > lx / 2) & (yc[None, :] > ly / 2))
        return cls(nx, ny, lx, ly, mask=mask)

    def meshgrid(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def area(self):
        return self.cell_area * int(self.mask.sum())

    def zeros(self):
        return np.zeros((self.nx, self.ny))

    def __repr__(self):
        return f"GridSpec({self.nx}x{self.ny}, lx={self.lx}, ly={self.ly}, inside={int(self.mask.sum())})"


class ScalarField:
    """Cell values of a scalar unknown together with its boundary closure."""

    def __init__(self, grid, values=None, bc=NEUMANN, bc_value=0.0):
        if bc not in (NEUMANN, DIRICHLET):
            raise InvalidInputError(f"unknown scalar bc '{bc}'")
        self.grid = grid
        if values is None:
            values = grid.zeros()
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.nx, grid.ny):
            raise InvalidInputError(f"values shape {values.shape} != grid {(grid.nx, grid.ny)}")
        self.values = values
        self.bc = bc
        self.bc_value = float(bc_value)

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), self.bc, self.bc_value)

    def with_values(self, values):
        return ScalarField(self.grid, values, self.bc, self.bc_value)

    def is_finite(self):
        return bool(np.isfinite(self.values[self.grid.mask]).all())


class VectorField:
    """Two cell-centered velocity components with the no-slip closure."""

    def __init__(self, grid, u1=None, u2=None):
        self.grid = grid
        self.u1 = grid.zeros() if u1 is None else np.asarray(u1, dtype=float)
        self.u2 = grid.zeros() if u2 is None else np.asarray(u2, dtype=float)
        if self.u1.shape != (grid.nx, grid.ny) or self.u2.shape != (grid.nx, grid.ny):
            raise InvalidInputError("component shape does not match grid")

    def copy(self):
        return VectorField(self.grid, self.u1.copy(), self.u2.copy())

    def is_finite(self):
        m = self.grid.mask
        return bool(np.isfinite(self.u1[m]).all() and np.isfinite(self.u2[m]).all())


def _ghost(values, bc, bc_value):
    if bc == NEUMANN:
        return values
    if bc == NOSLIP:
        return -values
    return 2.0 * bc_value - values


def neighbor_values(values, grid, bc, bc_value, axis, side):
    """Per-cell value seen across the face toward (axis, side).

    Returns the neighboring cell value when that cell is inside the mask and
    the ghost closure otherwise.  Cells outside the mask receive closures too,
    but operators only ever read results at inside cells.
    """
    gh = _ghost(values, bc, bc_value)
    out = gh.copy()
    nb_in = np.zeros(grid.mask.shape, dtype=bool)
    if axis == 0:
        if side > 0:
            nb_in[:-1, :] = grid.mask[1:, :]
            out[:-1, :] = np.where(nb_in[:-1, :], values[1:, :], gh[:-1, :])
        else:
            nb_in[1:, :] = grid.mask[:-1, :]
            out[1:, :] = np.where(nb_in[1:, :], values[:-1, :], gh[1:, :])
    else:
        if side > 0:
            nb_in[:, :-1] = grid.mask[:, 1:]
            out[:, :-1] = np.where(nb_in[:, :-1], values[:, 1:], gh[:, :-1])
        else:
            nb_in[:, 1:] = grid.mask[:, :-1]
            out[:, 1:] = np.where(nb_in[:, 1:], values[:, :-1], gh[:, 1:])
    return out


def scalar_neighbors(field):
    v, g = field.values, field.grid
    e = neighbor_values(v, g, field.bc, field.bc_value, 0, +1)
    w = neighbor_values(v, g, field.bc, field.bc_value, 0, -1)
    n = neighbor_values(v, g, field.bc, field.bc_value, 1, +1)
    s = neighbor_values(v, g, field.bc, field.bc_value, 1, -1)
    return e, w, n, s


def laplacian_array(values, grid, bc, bc_value=0.0):
    """5-point Laplacian of raw values under the given closure; zero outside."""
    e = neighbor_values(values, grid, bc, bc_value, 0, +1)
    w = neighbor_values(values, grid, bc, bc_value, 0, -1)
    n = neighbor_values(values, grid, bc, bc_value, 1, +1)
    s = neighbor_values(values, grid, bc, bc_value, 1, -1)
    lap = (e - 2.0 * values + w) / grid.hx**2 + (n - 2.0 * values + s) / grid.hy**2
    return np.where(grid.mask, lap, 0.0)


def laplacian(field):
    """Standard second-order 5-point Laplacian honoring the field's closure."""
    out = laplacian_array(field.values, field.grid, field.bc, field.bc_value)
    return field.with_values(out)


def gradient_arrays(values, grid, bc, bc_value=0.0):
    e = neighbor_values(values, grid, bc, bc_value, 0, +1)
    w = neighbor_values(values, grid, bc, bc_value, 0, -1)
    n = neighbor_values(values, grid, bc, bc_value, 1, +1)
    s = neighbor_values(values, grid, bc, bc_value, 1, -1)
    gx = np.where(grid.mask, (e - w) / (2.0 * grid.hx), 0.0)
    gy = np.where(grid.mask, (n - s) / (2.0 * grid.hy), 0.0)
    return gx, gy


def gradient(field):
    """Centered gradient of a scalar; for Neumann fields this is exactly the
    negative adjoint of :func:`divergence` in the cell-area inner product."""
    gx, gy = gradient_arrays(field.values, field.grid, field.bc, field.bc_value)
    return VectorField(field.grid, gx, gy)


def divergence_arrays(u1, u2, grid):
    e = neighbor_values(u1, grid, NOSLIP, 0.0, 0, +1)
    w = neighbor_values(u1, grid, NOSLIP, 0.0, 0, -1)
    n = neighbor_values(u2, grid, NOSLIP, 0.0, 1, +1)
    s = neighbor_values(u2, grid, NOSLIP, 0.0, 1, -1)
    d = (e - w) / (2.0 * grid.hx) + (n - s) / (2.0 * grid.hy)
    return np.where(grid.mask, d, 0.0)


def divergence(vfield):
    """Centered divergence with the no-slip closure.

    Equivalent to a conservative face-flux divergence whose face values are
    arithmetic means (zero at boundary faces), so it sums to zero over the mask.
    """
    d = divergence_arrays(vfield.u1, vfield.u2, vfield.grid)
    return ScalarField(vfield.grid, d, bc=NEUMANN)


def integrate(field):
    """Midpoint quadrature over the masked-in cells."""
    g = field.grid
    return g.cell_area * float(np.sum(field.values[g.mask]))


def integrate_array(values, grid):
    return grid.cell_area * float(np.sum(values[grid.mask]))


def inner(values_a, values_b, grid):
    """Cell-area weighted inner product over the mask."""
    m = grid.mask
    return grid.cell_area * float(np.sum(values_a[m] * values_b[m]))


def lp_norm(field, p):
    """(integral |f|^p)^(1/p); max over the mask for p = inf."""
    g = field.grid
    vals = field.values[g.mask]
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(vals))) if vals.size else 0.0
    p = float(p)
    if p < 1.0:
        raise InvalidInputError(f"lp_norm requires p >= 1 or p = inf, got {p}")
    return float((g.cell_area * np.sum(np.abs(vals) ** p)) ** (1.0 / p))


def l2_norm_arrays(grid, *arrays):
    """Discrete L2 norm of stacked components over the mask."""
    m = grid.mask
    total = 0.0
    for a in arrays:
        total += float(np.sum(a[m] ** 2))
    return float(np.sqrt(grid.cell_area * total))


def vector_gradient_arrays(vfield):
    """All four partials of a no-slip vector field (for enstrophy-type norms)."""
    g = vfield.grid
    d1x, d1y = gradient_arrays(vfield.u1, g, NOSLIP)
    d2x, d2y = gradient_arrays(vfield.u2, g, NOSLIP)
    return d1x, d1y, d2x, d2y


def face_mean_x(values, grid, bc, bc_value=0.0):
    """Arithmetic-mean values on the nx+1 x-faces; ghost closure outside."""
    e = neighbor_values(values, grid, bc, bc_value, 0, +1)
    face = np.zeros((grid.nx + 1, grid.ny))
    face[1:, :] = 0.5 * (values + e)[:, :]
    w = neighbor_values(values, grid, bc, bc_value, 0, -1)
    face[0, :] = 0.5 * (values[0, :] + w[0, :])
    return face


def face_mean_y(values, grid, bc, bc_value=0.0):
    n = neighbor_values(values, grid, bc, bc_value, 1, +1)
    face = np.zeros((grid.nx, grid.ny + 1))
    face[:, 1:] = 0.5 * (values + n)[:, :]
    s = neighbor_values(values, grid, bc, bc_value, 1, -1)
    face[:, 0] = 0.5 * (values[:, 0] + s[:, 0])
    return face


def interior_face_masks(grid):
    """Boolean (nx+1, ny) and (nx, ny+1) arrays marking faces between two inside cells."""
    fx = np.zeros((grid.nx + 1, grid.ny), dtype=bool)
    fx[1:-1, :] = grid.mask[:-1, :] & grid.mask[1:, :]
    fy = np.zeros((grid.nx, grid.ny + 1), dtype=bool)
    fy[:, 1:-1] = grid.mask[:, :-1] & grid.mask[:, 1:]
    return fx, fy


def face_velocities(vfield):
    """Face-normal velocities by arithmetic mean; exactly zero on boundary faces."""
    g = vfield.grid
    fx, fy = interior_face_masks(g)
    ux = np.zeros((g.nx + 1, g.ny))
    ux[1:-1, :] = 0.5 * (vfield.u1[:-1, :] + vfield.u1[1:, :])
    ux[~fx] = 0.0
    uy = np.zeros((g.nx, g.ny + 1))
    uy[:, 1:-1] = 0.5 * (vfield.u2[:, :-1] + vfield.u2[:, 1:])
    uy[~fy] = 0.0
    return ux, uy


def upwind_flux_divergence(values, grid, ux, uy):
    """div of the conservative upwind flux of `values` carried by face velocities.

    Face flux is vel * upwind(values); boundary/masked faces carry zero flux,
    so the masked integral of the result telescopes to zero.
    """
    fx, fy = interior_face_masks(grid)
    flux_x = np.zeros_like(ux)
    up_x = np.where(ux[1:-1, :] >= 0.0, values[:-1, :], values[1:, :])
    flux_x[1:-1, :] = ux[1:-1, :] * up_x
    flux_x[~fx] = 0.0
    flux_y = np.zeros_like(uy)
    up_y = np.where(uy[:, 1:-1] >= 0.0, values[:, :-1], values[:, 1:])
    flux_y[:, 1:-1] = uy[:, 1:-1] * up_y
    flux_y[~fy] = 0.0
    div = (flux_x[1:, :] - flux_x[:-1, :]) / grid.hx + (flux_y[:, 1:] - flux_y[:, :-1]) / grid.hy
    return np.where(grid.mask, div, 0.0)


def outflow_rate(grid, ux, uy):
    """Per-cell sum of outgoing face velocities divided by spacing.

    dt * max(outflow_rate) <= 1 guarantees the explicit conservative upwind
    update keeps nonnegative fields nonnegative.
    """
    out = (
        np.maximum(ux[1:, :], 0.0) / grid.hx
        + np.maximum(-ux[:-1, :], 0.0) / grid.hx
        + np.maximum(uy[:, 1:], 0.0) / grid.hy
        + np.maximum(-uy[:, :-1], 0.0) / grid.hy
    )
    return np.where(grid.mask, out, 0.0)


def upwind_convective_derivative(values, grid, w1, w2):
    """(w . grad) values with first-order upwind one-sided differences.

    The advected factor uses the no-slip closure (it is a velocity component).
    """
    e = neighbor_values(values, grid, NOSLIP, 0.0, 0, +1)
    w = neighbor_values(values, grid, NOSLIP, 0.0, 0, -1)
    n = neighbor_values(values, grid, NOSLIP, 0.0, 1, +1)
    s = neighbor_values(values, grid, NOSLIP, 0.0, 1, -1)
    dx = np.where(w1 > 0.0, (values - w) / grid.hx, (e - values) / grid.hx)
    dy = np.where(w2 > 0.0, (values - s) / grid.hy, (n - values) / grid.hy)
    return np.where(grid.mask, w1 * dx + w2 * dy, 0.0)
