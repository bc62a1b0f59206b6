"""Navier-Stokes substeps: smoothed convection, buoyancy, viscosity, projection.

Splitting within one step:

  1. explicit acceleration  a = -kappa (Y u . grad) u + n grad(phi),
     projected to its divergence-free part (its gradient part is the
     hydrostatic piece of the pressure),
  2. implicit viscosity     (I - dt Lap) u* = u + dt a_df  with no-slip,
  3. final projection       u_new = u* - grad q,  incremental pressure.

The acceleration is projected before the viscous solve so that gradient-type
forcing (e.g. constant n with a linear potential) is absorbed by the pressure
exactly instead of leaking wall layers through the no-slip Helmholtz solve.

The projection inverts div(grad(.)), the exact composition of this package's
divergence and gradient, so the divergence of the returned field equals the
solve residual.  Because the centered gradient is the negative adjoint of the
centered divergence, the projection is orthogonal in the cell-area inner
product and therefore never increases the L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import elliptic
from . import grid as g
from .errors import InvalidInputError, StepRejectedError

SOLVE_THEN_PROJECT = "solve-then-project"
PROJECT_THEN_SOLVE = "project-then-solve"


@dataclass
class FluidParams:
    """Convection strength, smoothing parameter, and the buoyancy potential."""

    kappa: float
    eps_reg: float
    phi: g.ScalarField
    yosida_order: str = SOLVE_THEN_PROJECT
    cfl_safety: float = 1.0

    def __post_init__(self):
        if self.eps_reg < 0:
            raise InvalidInputError("eps_reg must be >= 0")
        if not self.phi.is_finite():
            raise InvalidInputError("potential phi must be finite")
        if self.yosida_order not in (SOLVE_THEN_PROJECT, PROJECT_THEN_SOLVE):
            raise InvalidInputError(f"unknown yosida_order '{self.yosida_order}'")

    def grad_phi(self):
        if not hasattr(self, "_grad_phi"):
            self._grad_phi = g.gradient(self.phi)
        return self._grad_phi


@dataclass
class FluidWorkspace:
    """Warm-start storage threaded through consecutive fluid steps."""

    q_accel: np.ndarray | None = None
    q_final: np.ndarray | None = None
    q_yosida: np.ndarray | None = None


def leray_project(vfield, config=elliptic.DEFAULT_CONFIG, x0=None):
    """Split v into (divergence-free part, zero-mean potential q), v = v_df + grad q.

    Solves -div(grad q) = -div(v) so that div(v - grad q) is exactly the solve
    residual; the stopping tolerance is tol_rel * max(1, |v|_2).
    """
    grid = vfield.grid
    div_v = g.divergence_arrays(vfield.u1, vfield.u2, grid)
    v_norm = g.l2_norm_arrays(grid, vfield.u1, vfield.u2)
    tol_abs = 0.5 * config.tol_rel * max(1.0, v_norm)
    rhs = g.ScalarField(grid, -div_v, bc=g.NEUMANN)
    q = elliptic.solve_poisson_neumann(rhs, config=config, operator="composed", x0=x0, tol_abs=tol_abs)
    gx, gy = g.gradient_arrays(q.values, grid, g.NEUMANN)
    projected = g.VectorField(grid, np.where(grid.mask, vfield.u1 - gx, 0.0),
                              np.where(grid.mask, vfield.u2 - gy, 0.0))
    return projected, q


def yosida_apply(vfield, eps_reg, config=elliptic.DEFAULT_CONFIG, order=SOLVE_THEN_PROJECT,
                 workspace=None):
    """Smoothing resolvent: componentwise (I - eps * Lap)^{-1} plus projection.

    eps_reg = 0 returns the field unchanged.  The Helmholtz inverse and the
    orthogonal projection are both L2 contractions, so |Y u|_2 <= |u|_2.
    """
    if eps_reg < 0:
        raise InvalidInputError("eps_reg must be >= 0")
    if eps_reg == 0.0:
        return vfield.copy()
    grid = vfield.grid
    x0 = workspace.q_yosida if workspace is not None else None

    def smooth(vf):
        s1 = elliptic.solve_helmholtz(
            g.ScalarField(grid, vf.u1, bc=g.NEUMANN), eps_reg, bc=g.NOSLIP, config=config)
        s2 = elliptic.solve_helmholtz(
            g.ScalarField(grid, vf.u2, bc=g.NEUMANN), eps_reg, bc=g.NOSLIP, config=config)
        return g.VectorField(grid, s1.values, s2.values)

    if order == PROJECT_THEN_SOLVE:
        projected, q = leray_project(vfield, config=config, x0=x0)
        out = smooth(projected)
    else:
        out, q = leray_project(smooth(vfield), config=config, x0=x0)
    if workspace is not None:
        workspace.q_yosida = q.values
    return out


def convective_term(vfield, eps_reg, kappa, config=elliptic.DEFAULT_CONFIG,
                    order=SOLVE_THEN_PROJECT, workspace=None):
    """kappa * (Y_eps u . grad) u with upwind differences on the advected factor."""
    grid = vfield.grid
    if kappa == 0.0:
        return g.VectorField(grid)
    w = yosida_apply(vfield, eps_reg, config=config, order=order, workspace=workspace)
    c1 = g.upwind_convective_derivative(vfield.u1, grid, w.u1, w.u2)
    c2 = g.upwind_convective_derivative(vfield.u2, grid, w.u1, w.u2)
    return g.VectorField(grid, kappa * c1, kappa * c2)


def advective_cfl_limit(vfield, safety=1.0):
    """dt cap 0.5 h / max|u| for the explicit convection term."""
    grid = vfield.grid
    m = grid.mask
    umax = max(float(np.max(np.abs(vfield.u1[m]))), float(np.max(np.abs(vfield.u2[m]))))
    if umax == 0.0:
        return np.inf
    return safety * 0.5 * min(grid.hx, grid.hy) / umax


def fluid_step(vfield, n_field, params, dt, config=elliptic.DEFAULT_CONFIG, workspace=None):
    """One split step of the velocity/pressure subsystem.

    Returns (u_new, P) where P = q_accel + q_final / dt, zero mean.  Raises
    StepRejectedError when kappa != 0 and dt violates the advective CFL.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    grid = vfield.grid
    if params.kappa != 0.0:
        dt_max = advective_cfl_limit(vfield, params.cfl_safety)
        if dt > dt_max:
            raise StepRejectedError("advective CFL violated in fluid step", dt_max)

    conv = convective_term(vfield, params.eps_reg, params.kappa, config=config,
                           order=params.yosida_order, workspace=workspace)
    gphi = params.grad_phi()
    a1 = np.where(grid.mask, -conv.u1 + n_field.values * gphi.u1, 0.0)
    a2 = np.where(grid.mask, -conv.u2 + n_field.values * gphi.u2, 0.0)

    x0a = workspace.q_accel if workspace is not None else None
    accel_df, q_accel = leray_project(g.VectorField(grid, a1, a2), config=config, x0=x0a)

    rhs1 = g.ScalarField(grid, vfield.u1 + dt * accel_df.u1, bc=g.NEUMANN)
    rhs2 = g.ScalarField(grid, vfield.u2 + dt * accel_df.u2, bc=g.NEUMANN)
    star1 = elliptic.solve_helmholtz(rhs1, dt, bc=g.NOSLIP, config=config)
    star2 = elliptic.solve_helmholtz(rhs2, dt, bc=g.NOSLIP, config=config)

    x0b = workspace.q_final if workspace is not None else None
    u_new, q_final = leray_project(g.VectorField(grid, star1.values, star2.values),
                                   config=config, x0=x0b)
    if workspace is not None:
        workspace.q_accel = q_accel.values
        workspace.q_final = q_final.values

    pressure = g.ScalarField(grid, np.where(grid.mask, q_accel.values + q_final.values / dt, 0.0),
                             bc=g.NEUMANN)
    return u_new, pressure
