"""Cell density and chemoattractant substeps with saturated tensor sensitivity.

The sensitivity is a 2x2 matrix map S(x, n, c) whose operator norm is capped
by c_s * (1 + n)^(-alpha).  Its regularized variant multiplies by a spatial
cutoff rho(x) and a density cap chi(n) that relaxes as eps_reg -> 0; with
identity cutoffs (or eps_reg = 0) the regularized path is bitwise identical
to the plain one.

Transport of n combines fluid advection and the chemotactic drift S grad(c)
into a single conservative upwind face flux: the masked integral of n is then
conserved exactly per step, and the per-cell outflow CFL guarantees n >= 0.
The c update splits advection (conservative upwind), the production/decay
reaction (integrated exactly: c <- exp(-dt) c + (1 - exp(-dt)) n), and
implicit diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import elliptic
from . import grid as g
from .errors import InvalidInputError, PositivityError, StepRejectedError

SCALAR_IDENTITY = "scalar-identity"
ROTATION = "rotation"
CUSTOM = "custom"

IDENTITY = "identity"
MOLLIFIED_INDICATOR = "mollified-indicator"
SMOOTH_CAP = "smooth-cap"

POSITIVITY_TOL = 1e-10


@dataclass
class SensitivitySpec:
    """Saturation law and optional regularization cutoffs for the sensitivity tensor."""

    c_s: float = 1.0
    alpha: float = 0.5
    form: str = SCALAR_IDENTITY
    theta_rot: float = 0.0
    custom_fn: object = None  # callable (x, y, n, c) -> (s11, s12, s21, s22), broadcasting
    rho_cutoff: str = IDENTITY
    rho_margin: float = 0.1
    chi_cutoff: str = IDENTITY

    def __post_init__(self):
        if self.c_s <= 0:
            raise InvalidInputError("c_s must be > 0")
        if self.alpha < 0:
            raise InvalidInputError("alpha must be >= 0")
        if self.form not in (SCALAR_IDENTITY, ROTATION, CUSTOM):
            raise InvalidInputError(f"unknown sensitivity form '{self.form}'")
        if self.form == CUSTOM and not callable(self.custom_fn):
            raise InvalidInputError("custom sensitivity requires a callable")
        if self.rho_cutoff not in (IDENTITY, MOLLIFIED_INDICATOR):
            raise InvalidInputError(f"unknown rho cutoff '{self.rho_cutoff}'")
        if self.chi_cutoff not in (IDENTITY, SMOOTH_CAP):
            raise InvalidInputError(f"unknown chi cutoff '{self.chi_cutoff}'")

    def amplitude(self, n):
        """Saturation factor c_s * (1 + n)^(-alpha)."""
        return self.c_s * (1.0 + n) ** (-self.alpha)

    def chi(self, n, eps_reg):
        """Smooth density cap at level 1/eps_reg (identity when disabled or eps = 0)."""
        if self.chi_cutoff == IDENTITY or eps_reg == 0.0:
            return np.ones_like(np.asarray(n, dtype=float))
        level = 1.0 / eps_reg
        s = np.clip((np.asarray(n, dtype=float) - 0.5 * level) / (0.5 * level), 0.0, 1.0)
        return 1.0 - (3.0 * s**2 - 2.0 * s**3)

    def matrix_components(self, x, y, n, c):
        """(s11, s12, s21, s22) of the unregularized tensor, broadcasting over arrays."""
        amp = self.amplitude(np.asarray(n, dtype=float))
        if self.form == SCALAR_IDENTITY:
            zero = np.zeros_like(amp)
            return amp, zero, zero, amp
        if self.form == ROTATION:
            ct, st = np.cos(self.theta_rot), np.sin(self.theta_rot)
            return amp * ct, -amp * st, amp * st, amp * ct
        return self.custom_fn(x, y, n, c)


@dataclass
class ChemotaxisParams:
    """Sensitivity plus step-control knobs for the n/c updates."""

    sensitivity: SensitivitySpec
    eps_reg: float = 0.0
    cfl_safety: float = 0.9
    positivity_floor: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.eps_reg < 0:
            raise InvalidInputError("eps_reg must be >= 0")
        if not (0 < self.cfl_safety <= 1):
            raise InvalidInputError("cfl_safety must lie in (0, 1]")


def boundary_distance(grid):
    """Cell-center distance to the nearest outside cell / outer boundary."""
    padded = np.zeros((grid.nx + 2, grid.ny + 2), dtype=bool)
    padded[1:-1, 1:-1] = grid.mask
    d = ndimage.distance_transform_edt(padded, sampling=(grid.hx, grid.hy))
    return d[1:-1, 1:-1]


def rho_values(spec, grid):
    """Spatial cutoff field on cells: 1 inside, smoothly 0 within rho_margin of the wall."""
    if spec.rho_cutoff == IDENTITY:
        return np.ones((grid.nx, grid.ny))
    s = np.clip(boundary_distance(grid) / spec.rho_margin, 0.0, 1.0)
    return 3.0 * s**2 - 2.0 * s**3


def eval_sensitivity(spec, x, n, c, regularized=False, eps_reg=0.0, rho=1.0):
    """Pointwise 2x2 sensitivity matrix; operator norm <= c_s (1 + n)^(-alpha).

    `x` is the (x, y) evaluation point; `rho` is the spatial cutoff value there
    (1 unless a mollified indicator is in play).  Raises PositivityError for
    negative n or c since those signal an upstream positivity violation.
    """
    if n < 0 or c < 0:
        raise PositivityError(f"sensitivity evaluated at negative (n, c) = ({n}, {c})")
    px, py = float(x[0]), float(x[1])
    s11, s12, s21, s22 = spec.matrix_components(px, py, n, c)
    mat = np.array([[s11, s12], [s21, s22]], dtype=float)
    if regularized:
        mat = mat * (float(rho) * float(spec.chi(n, eps_reg)))
    return mat


def _face_geometry(grid):
    xf = np.arange(grid.nx + 1) * grid.hx
    yf = np.arange(grid.ny + 1) * grid.hy
    return xf, yf


def chemo_face_velocities(n_field, c_field, spec, eps_reg=0.0, regularized=True):
    """Drift velocity (S grad c) at interior x- and y-faces; zero on boundary faces.

    The face-normal derivative of c is the tight two-point difference; the
    tangential derivative is the mean of the adjacent centered cell gradients.
    """
    grid = n_field.grid
    n, c = n_field.values, c_field.values
    fx, fy = g.interior_face_masks(grid)
    gcx, gcy = g.gradient_arrays(c, grid, c_field.bc, c_field.bc_value)

    xf, yf = _face_geometry(grid)
    rho = rho_values(spec, grid) if (regularized and spec.rho_cutoff != IDENTITY) else None

    wx = np.zeros((grid.nx + 1, grid.ny))
    dcdx = (c[1:, :] - c[:-1, :]) / grid.hx
    dcdy = 0.5 * (gcy[:-1, :] + gcy[1:, :])
    n_face = 0.5 * (n[:-1, :] + n[1:, :])
    c_face = 0.5 * (c[:-1, :] + c[1:, :])
    s11, s12, _, _ = spec.matrix_components(
        xf[1:-1, None], grid.y[None, :], n_face, c_face)
    factor = np.ones_like(n_face)
    if regularized:
        factor = spec.chi(n_face, eps_reg)
        if rho is not None:
            factor = factor * 0.5 * (rho[:-1, :] + rho[1:, :])
    wx[1:-1, :] = factor * (s11 * dcdx + s12 * dcdy)
    wx[~fx] = 0.0

    wy = np.zeros((grid.nx, grid.ny + 1))
    dcdy_t = (c[:, 1:] - c[:, :-1]) / grid.hy
    dcdx_m = 0.5 * (gcx[:, :-1] + gcx[:, 1:])
    n_face = 0.5 * (n[:, :-1] + n[:, 1:])
    c_face = 0.5 * (c[:, :-1] + c[:, 1:])
    _, _, s21, s22 = spec.matrix_components(
        grid.x[:, None], yf[None, 1:-1], n_face, c_face)
    factor = np.ones_like(n_face)
    if regularized:
        factor = spec.chi(n_face, eps_reg)
        if rho is not None:
            factor = factor * 0.5 * (rho[:, :-1] + rho[:, 1:])
    wy[:, 1:-1] = factor * (s21 * dcdx_m + s22 * dcdy_t)
    wy[~fy] = 0.0
    return wx, wy


def chemotactic_flux_div(n_field, c_field, spec, eps_reg=0.0, regularized=True):
    """div(n S grad c) in conservative face form; masked integral is zero.

    n is upwinded along the face drift, which keeps the explicit update
    positivity-preserving under the outflow CFL.
    """
    if float(np.min(n_field.values[n_field.grid.mask])) < -POSITIVITY_TOL:
        raise PositivityError("chemotactic flux evaluated at negative n")
    grid = n_field.grid
    wx, wy = chemo_face_velocities(n_field, c_field, spec, eps_reg, regularized)
    div = g.upwind_flux_divergence(n_field.values, grid, wx, wy)
    return g.ScalarField(grid, div, bc=g.NEUMANN)


def _min_inside(values, grid):
    return float(np.min(values[grid.mask]))


def _apply_floor(values, grid, floor):
    if floor > 0.0:
        return np.where(grid.mask & (values < 0.0) & (values >= -floor), 0.0, values)
    return values


def _check_positive(values, grid, name):
    mn = _min_inside(values, grid)
    if mn < -POSITIVITY_TOL:
        raise PositivityError(f"{name} dipped to {mn:.3e} (below -{POSITIVITY_TOL:g})")


def _tight_tol(grid, b):
    return 1e-12 * max(1.0, g.l2_norm_arrays(grid, b))


def transport_dt_limit(state, params):
    """Largest dt keeping both upwind updates positivity-preserving."""
    grid = state.n.grid
    ux, uy = g.face_velocities(state.u)
    wx, wy = chemo_face_velocities(state.n, state.c, params.sensitivity, params.eps_reg)
    rate_n = float(np.max(g.outflow_rate(grid, ux + wx, uy + wy)))
    rate_c = float(np.max(g.outflow_rate(grid, ux, uy)))
    rate = max(rate_n, rate_c)
    if rate == 0.0:
        return np.inf
    return params.cfl_safety / rate


def step_n(state, params, dt, config=elliptic.DEFAULT_CONFIG, x0=None):
    """Advance the cell density: upwind advection + chemotaxis, implicit diffusion.

    The diffusion update is applied in flux form (n* + dt * Lap of the solve
    result), so the masked integral of n is conserved to round-off regardless
    of the linear-solver tolerance.
    """
    grid = state.n.grid
    n = state.n
    _check_positive(n.values, grid, "n")

    ux, uy = g.face_velocities(state.u)
    wx, wy = chemo_face_velocities(n, state.c, params.sensitivity, params.eps_reg)
    vx, vy = ux + wx, uy + wy
    rate = float(np.max(g.outflow_rate(grid, vx, vy)))
    if rate > 0.0 and dt > params.cfl_safety / rate:
        raise StepRejectedError("transport CFL violated in n step", params.cfl_safety / rate)

    n_star = np.where(grid.mask, n.values - dt * g.upwind_flux_divergence(n.values, grid, vx, vy), 0.0)
    n_star = _apply_floor(n_star, grid, params.positivity_floor)
    _check_positive(n_star, grid, "n (after transport)")

    rhs = g.ScalarField(grid, n_star, bc=g.NEUMANN)
    smooth = elliptic.solve_helmholtz(rhs, dt, bc=g.NEUMANN, config=config, x0=x0,
                                      tol_abs=_tight_tol(grid, n_star))
    n_new = n_star + dt * g.laplacian_array(smooth.values, grid, g.NEUMANN)
    n_new = _apply_floor(np.where(grid.mask, n_new, 0.0), grid, params.positivity_floor)
    _check_positive(n_new, grid, "n (after diffusion)")
    return g.ScalarField(grid, n_new, bc=g.NEUMANN)


def step_c(state, dt, config=elliptic.DEFAULT_CONFIG, cfl_safety=0.9, positivity_floor=0.0,
           x0=None):
    """Advance the chemoattractant: upwind advection, exact reaction, implicit diffusion."""
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    grid = state.c.grid
    c = state.c
    _check_positive(c.values, grid, "c")

    ux, uy = g.face_velocities(state.u)
    rate = float(np.max(g.outflow_rate(grid, ux, uy)))
    if rate > 0.0 and dt > cfl_safety / rate:
        raise StepRejectedError("advective CFL violated in c step", cfl_safety / rate)

    c_star = np.where(grid.mask, c.values - dt * g.upwind_flux_divergence(c.values, grid, ux, uy), 0.0)
    decay = np.exp(-dt)
    c_star = decay * c_star + (1.0 - decay) * np.where(grid.mask, state.n.values, 0.0)
    _check_positive(c_star, grid, "c (after transport/reaction)")

    rhs = g.ScalarField(grid, c_star, bc=g.NEUMANN)
    c_new = elliptic.solve_helmholtz(rhs, dt, bc=g.NEUMANN, config=config, x0=x0,
                                     tol_abs=_tight_tol(grid, c_star))
    vals = _apply_floor(c_new.values, grid, positivity_floor)
    _check_positive(vals, grid, "c (after diffusion)")
    return g.ScalarField(grid, vals, bc=g.NEUMANN)
