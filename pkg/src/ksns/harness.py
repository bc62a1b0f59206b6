"""Time-stepping driver, experiment suite, and file I/O.

Step ordering is c, then n, then fluid (Strang symmetrization behind a flag).
Adaptive stepping halves dt in powers of two below the configured dt until the
stability/positivity limits are met, and doubles back when there is 2x
headroom; quantized steps keep the solver factorization cache warm and runs
bit-reproducible.

External formats:
  * time series CSV with the fixed header
    t,mass_n,mass_c,norm_n_1pa,grad_c_sq,energy,sup_n,sup_grad_c,kinetic,
    enstrophy,div_residual,min_n,min_c
  * field snapshots: 16-byte magic "KSNS-SNAPSHOT-v1", nx and ny as little-
    endian int64, then row-major little-endian float64 fields n, c, u1, u2, P.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import chemotaxis as chemo
from . import config as cfgmod
from . import diagnostics as diag
from . import elliptic
from . import fluid as fl
from . import grid as g
from .errors import (
    ConfigError,
    InvalidInputError,
    NumericalBreakdownError,
    PositivityError,
    SolverDivergenceError,
    StepRejectedError,
)
from .state import SimState

COMPLETED = "completed"
BLOWUP = "blowup-detected"
SOLVER_DIVERGENCE = "solver-divergence"
STEP_REJECTED_LIMIT = "step-rejected-limit"

CSV_HEADER = ",".join(diag.RECORD_FIELDS)
SNAPSHOT_MAGIC = b"KSNS-SNAPSHOT-v1"


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_grid(cfg):
    gc = cfg.grid
    if gc.shape == cfgmod.L_SHAPE:
        return g.GridSpec.l_shape(gc.nx, gc.ny, gc.lx, gc.ly)
    return g.GridSpec.rectangle(gc.nx, gc.ny, gc.lx, gc.ly)


def build_phi(cfg, grid):
    pc = cfg.phi
    if pc.form == "constant":
        vals = np.full((grid.nx, grid.ny), pc.value)
    elif pc.form == "linear":
        xx, yy = grid.meshgrid()
        vals = pc.ax * xx + pc.ay * yy
    else:
        vals = np.load(pc.path)
        if vals.shape != (grid.nx, grid.ny):
            raise ConfigError("phi.path", f"array shape {vals.shape} != grid {(grid.nx, grid.ny)}")
    return g.ScalarField(grid, np.where(grid.mask, vals, 0.0), bc=g.NEUMANN)


def gaussian_density(grid, center_x, center_y, width, mass):
    """Gaussian bump rescaled so its masked integral is exactly `mass`."""
    xx, yy = grid.meshgrid()
    bump = np.exp(-((xx - center_x) ** 2 + (yy - center_y) ** 2) / (2.0 * width**2))
    bump = np.where(grid.mask, bump, 0.0)
    total = g.integrate_array(bump, grid)
    if total <= 0:
        raise ConfigError("initial.width", "gaussian has zero mass on the mask")
    return bump * (mass / total)


def build_initial_state(cfg, grid):
    ic = cfg.initial
    if ic.kind == "uniform":
        n = np.full((grid.nx, grid.ny), ic.n0)
        c = np.full((grid.nx, grid.ny), ic.c0)
        u1 = u2 = None
    elif ic.kind == "gaussian":
        n = gaussian_density(grid, ic.center_x, ic.center_y, ic.width, ic.mass)
        c = np.full((grid.nx, grid.ny), ic.c0)
        u1 = u2 = None
    else:
        n, c, u1, u2, _ = read_snapshot(ic.path, grid)
    mask0 = lambda a: np.where(grid.mask, a, 0.0)
    state = SimState(
        t=0.0,
        n=g.ScalarField(grid, mask0(n), bc=g.NEUMANN),
        c=g.ScalarField(grid, mask0(c), bc=g.NEUMANN),
        u=g.VectorField(grid, None if u1 is None else mask0(u1),
                        None if u2 is None else mask0(u2)),
        p=g.ScalarField(grid, grid.zeros(), bc=g.NEUMANN),
    )
    if float(np.min(state.n.values[grid.mask])) < 0 or float(np.min(state.c.values[grid.mask])) < 0:
        raise ConfigError("initial.kind", "initial n and c must be nonnegative")
    return state


def build_sensitivity(cfg):
    ph = cfg.physics
    return chemo.SensitivitySpec(
        c_s=ph.c_s,
        alpha=ph.alpha,
        form=ph.sensitivity,
        theta_rot=ph.theta_rot,
        rho_cutoff=ph.rho_cutoff,
        rho_margin=ph.rho_margin,
        chi_cutoff=ph.chi_cutoff,
    )


def build_solver_config(cfg):
    nm = cfg.numerics
    return elliptic.SolverConfig(
        tol_rel=nm.tol_rel,
        max_iter=nm.max_iter if nm.max_iter > 0 else None,
        method=nm.solver,
    )


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    final_state: SimState
    records: list
    termination: str
    config: object

    def record_array(self, field_name):
        return np.array([getattr(r, field_name) for r in self.records])


def _advance(state, dt, params, fluid_params, solver_cfg, strang, workspace):
    """One composite step at the given dt; returns the new state."""
    if strang:
        c1 = chemo.step_c(state, 0.5 * dt, config=solver_cfg, cfl_safety=params.cfl_safety)
        mid = SimState(state.t, state.n, c1, state.u, state.p)
        n1 = chemo.step_n(mid, params, 0.5 * dt, config=solver_cfg)
        mid = SimState(state.t, n1, c1, state.u, state.p)
        u_new, p_new = fl.fluid_step(mid.u, mid.n, fluid_params, dt,
                                     config=solver_cfg, workspace=workspace)
        mid = SimState(state.t, n1, c1, u_new, p_new)
        n2 = chemo.step_n(mid, params, 0.5 * dt, config=solver_cfg)
        mid = SimState(state.t, n2, c1, u_new, p_new)
        c2 = chemo.step_c(mid, 0.5 * dt, config=solver_cfg, cfl_safety=params.cfl_safety)
        return SimState(state.t + dt, n2, c2, u_new, p_new)
    c_new = chemo.step_c(state, dt, config=solver_cfg, cfl_safety=params.cfl_safety)
    mid = SimState(state.t, state.n, c_new, state.u, state.p)
    n_new = chemo.step_n(mid, params, dt, config=solver_cfg)
    mid = SimState(state.t, n_new, c_new, state.u, state.p)
    u_new, p_new = fl.fluid_step(mid.u, mid.n, fluid_params, dt,
                                 config=solver_cfg, workspace=workspace)
    return SimState(state.t + dt, n_new, c_new, u_new, p_new)


def run_simulation(cfg, progress=None):
    """Integrate the configured system to t_end, recording at the output cadence.

    Deterministic for a fixed config.  Termination is `completed` at t_end,
    `blowup-detected` when the detector fires (or a record turns non-finite),
    `solver-divergence` when a linear solve fails, and `step-rejected-limit`
    when the step size cannot satisfy stability limits (fixed-dt runs reject
    immediately; adaptive runs first halve dt max_halvings times).
    """
    cfgmod.validate_config(cfg)
    grid = build_grid(cfg)
    state = build_initial_state(cfg, grid)
    phi = build_phi(cfg, grid)
    sens = build_sensitivity(cfg)
    params = chemo.ChemotaxisParams(sensitivity=sens, eps_reg=cfg.physics.eps_reg,
                                    cfl_safety=cfg.numerics.cfl_safety)
    fluid_params = fl.FluidParams(kappa=cfg.physics.kappa, eps_reg=cfg.physics.eps_reg,
                                  phi=phi, cfl_safety=cfg.numerics.cfl_safety)
    solver_cfg = build_solver_config(cfg)
    thresholds = diag.BlowupThresholds(cfg.monitor.sup_n_max, cfg.monitor.sup_grad_c_max,
                                       cfg.monitor.growth_ratio)
    nm = cfg.numerics
    workspace = fl.FluidWorkspace()
    alpha = cfg.physics.alpha

    records = [diag.compute_record(state, alpha)]
    prev_record = records[0]
    verdict = diag.blowup_detector(records[0], thresholds)
    if not verdict.ok:
        return RunResult(state, records, BLOWUP, cfg)

    dt_floor = nm.dt / 2.0**nm.max_halvings
    halvings = 0
    step_index = 0
    termination = COMPLETED
    t_end = nm.t_end
    while state.t < t_end - 1e-12 * t_end:
        dt = min(nm.dt / 2.0**halvings, t_end - state.t)
        try:
            new_state = _advance(state, dt, params, fluid_params, solver_cfg, nm.strang, workspace)
        except StepRejectedError as exc:
            if not nm.adaptive:
                termination = STEP_REJECTED_LIMIT
                break
            needed = exc.dt_suggested
            while nm.dt / 2.0**halvings > needed and nm.dt / 2.0**halvings > dt_floor:
                halvings += 1
            if nm.dt / 2.0**halvings > needed:
                termination = STEP_REJECTED_LIMIT
                break
            continue
        except (SolverDivergenceError,):
            termination = SOLVER_DIVERGENCE
            break
        except (PositivityError,):
            termination = STEP_REJECTED_LIMIT
            break

        state = new_state
        step_index += 1
        if nm.adaptive and halvings > 0 and step_index % 8 == 0:
            # relax dt when the limits allow 2x headroom
            limit = min(chemo.transport_dt_limit(state, params),
                        fl.advective_cfl_limit(state.u, nm.cfl_safety)
                        if cfg.physics.kappa != 0.0 else np.inf)
            if nm.dt / 2.0 ** (halvings - 1) <= 0.5 * limit:
                halvings -= 1

        if step_index % cfg.output.cadence == 0 or state.t >= t_end - 1e-12 * t_end:
            try:
                rec = diag.compute_record(state, alpha)
            except NumericalBreakdownError:
                termination = BLOWUP
                break
            records.append(rec)
            if progress is not None:
                progress(rec)
            verdict = diag.blowup_detector(rec, thresholds, prev_record)
            prev_record = rec
            if not verdict.ok:
                termination = BLOWUP
                break
    return RunResult(state, records, termination, cfg)


# ---------------------------------------------------------------------------
# CSV and snapshot formats
# ---------------------------------------------------------------------------

def format_csv(records):
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join(format(v, ".17g") for v in r.as_tuple()))
    return "\n".join(lines) + "\n"


def write_csv(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_csv(records))


def write_snapshot(path, state):
    grid = state.n.grid
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(np.array([grid.nx, grid.ny], dtype="<i8").tobytes())
        for arr in (state.n.values, state.c.values, state.u.u1, state.u.u2, state.p.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path, grid=None):
    """Returns (n, c, u1, u2, p) arrays; validates the magic and dimensions."""
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != SNAPSHOT_MAGIC:
            raise InvalidInputError(f"bad snapshot magic in {path}")
        dims = np.frombuffer(fh.read(16), dtype="<i8")
        nx, ny = int(dims[0]), int(dims[1])
        if grid is not None and (nx, ny) != (grid.nx, grid.ny):
            raise InvalidInputError(f"snapshot is {nx}x{ny}, grid is {grid.nx}x{grid.ny}")
        fields = []
        for _ in range(5):
            buf = fh.read(8 * nx * ny)
            fields.append(np.frombuffer(buf, dtype="<f8").reshape(nx, ny).copy())
    return tuple(fields)


def run_and_write(cfg, csv_path=None, snapshot_dir=None):
    """run_simulation plus the configured file outputs; returns the RunResult."""
    result = run_simulation(cfg)
    csv_path = csv_path or cfg.output.csv
    if csv_path:
        write_csv(result.records, csv_path)
    snapshot_dir = snapshot_dir or cfg.output.snapshot_dir
    if snapshot_dir and cfg.output.snapshot_every > 0:
        os.makedirs(snapshot_dir, exist_ok=True)
        write_snapshot(os.path.join(snapshot_dir, f"snapshot_{result.final_state.t:.6f}.bin"),
                       result.final_state)
    return result


# ---------------------------------------------------------------------------
# Experiment suite
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    alpha: float
    sup_sup_n: float
    sup_energy: float
    termination: str
    error: str = ""


def alpha_sweep(base_cfg, alphas):
    """One run per alpha, otherwise identical; failures are recorded per row."""
    alphas = list(alphas)
    if not alphas:
        raise InvalidInputError("alpha list must be non-empty")
    if any(a < 0 for a in alphas):
        raise InvalidInputError("alphas must be >= 0")
    rows = []
    for a in alphas:
        cfg = replace(base_cfg, physics=replace(base_cfg.physics, alpha=a))
        try:
            result = run_simulation(cfg)
            rows.append(SweepRow(
                alpha=a,
                sup_sup_n=float(np.max(result.record_array("sup_n"))),
                sup_energy=float(np.max(result.record_array("energy"))),
                termination=result.termination,
            ))
        except Exception as exc:  # per-run errors must not kill the sweep
            rows.append(SweepRow(a, math.nan, math.nan, "error", repr(exc)))
    return rows


def format_sweep_csv(rows):
    lines = ["alpha,sup_sup_n,sup_energy,termination,error"]
    for r in rows:
        lines.append(f"{r.alpha!r},{format(r.sup_sup_n, '.17g')},{format(r.sup_energy, '.17g')},"
                     f"{r.termination},{r.error}")
    return "\n".join(lines) + "\n"


@dataclass
class EpsRow:
    eps_reg: float
    termination: str
    dist_n: float = math.nan  # L2 distance of final fields to the previous eps run
    dist_c: float = math.nan
    dist_u: float = math.nan
    error: str = ""


def regularization_study(base_cfg, eps_list):
    """Runs at decreasing eps_reg; reports consecutive final-state L2 distances."""
    eps_list = list(eps_list)
    if not eps_list:
        raise InvalidInputError("eps list must be non-empty")
    if any(e < 0 for e in eps_list):
        raise InvalidInputError("eps values must be >= 0")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) and len(eps_list) > 1:
        raise InvalidInputError("eps values must be strictly decreasing")
    rows = []
    prev_state = None
    for eps in eps_list:
        cfg = replace(base_cfg, physics=replace(base_cfg.physics, eps_reg=eps))
        try:
            result = run_simulation(cfg)
        except Exception as exc:
            rows.append(EpsRow(eps, "error", error=repr(exc)))
            prev_state = None
            continue
        row = EpsRow(eps, result.termination)
        st = result.final_state
        if prev_state is not None:
            grid = st.n.grid
            row.dist_n = g.l2_norm_arrays(grid, st.n.values - prev_state.n.values)
            row.dist_c = g.l2_norm_arrays(grid, st.c.values - prev_state.c.values)
            row.dist_u = g.l2_norm_arrays(grid, st.u.u1 - prev_state.u.u1,
                                          st.u.u2 - prev_state.u.u2)
        rows.append(row)
        prev_state = st
    return rows


def format_eps_csv(rows):
    lines = ["eps_reg,termination,dist_n,dist_c,dist_u,error"]
    for r in rows:
        lines.append(f"{r.eps_reg!r},{r.termination},{format(r.dist_n, '.17g')},"
                     f"{format(r.dist_c, '.17g')},{format(r.dist_u, '.17g')},{r.error}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Convergence studies (discretization verification)
# ---------------------------------------------------------------------------

def _observed_order(hs, errs):
    hs, errs = np.asarray(hs, dtype=float), np.asarray(errs, dtype=float)
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def _manufactured(grid):
    xx, yy = grid.meshgrid()
    f = np.cos(np.pi * xx / grid.lx) * np.cos(np.pi * yy / grid.ly)
    lam = (np.pi / grid.lx) ** 2 + (np.pi / grid.ly) ** 2
    return f, lam


def _helmholtz_error(n, lx, ly, theta, solver_cfg):
    grid = g.GridSpec.rectangle(n, n, lx, ly)
    f, lam = _manufactured(grid)
    rhs = g.ScalarField(grid, (1.0 + theta * lam) * f, bc=g.NEUMANN)
    sol = elliptic.solve_helmholtz(rhs, theta, bc=g.NEUMANN, config=solver_cfg)
    return g.l2_norm_arrays(grid, sol.values - f)


def _poisson_error(n, lx, ly, solver_cfg):
    grid = g.GridSpec.rectangle(n, n, lx, ly)
    f, lam = _manufactured(grid)
    rhs = g.ScalarField(grid, lam * f, bc=g.NEUMANN)
    sol = elliptic.solve_poisson_neumann(rhs, config=solver_cfg)
    return g.l2_norm_arrays(grid, sol.values - f)


def _heat_error(n, lx, ly, solver_cfg):
    # transient diffusion with dt ~ h^2 so the spatial order dominates
    grid = g.GridSpec.rectangle(n, n, lx, ly)
    f0, lam = _manufactured(grid)
    t_final = 0.02
    dt = 0.25 * grid.hx * grid.hy
    steps = max(1, int(round(t_final / dt)))
    dt = t_final / steps
    vals = f0.copy()
    for _ in range(steps):
        rhs = g.ScalarField(grid, vals, bc=g.NEUMANN)
        vals = elliptic.solve_helmholtz(rhs, dt, bc=g.NEUMANN, config=solver_cfg).values
    exact = np.exp(-lam * t_final) * f0
    return g.l2_norm_arrays(grid, vals - exact)


def _advection_error(n, lx, ly):
    # rigid rotation of an interior bump; compare against the rotated profile
    grid = g.GridSpec.rectangle(n, n, lx, ly)
    xx, yy = grid.meshgrid()
    cx, cy = lx / 2.0, ly / 2.0
    omega = 1.0
    u = g.VectorField(grid, -omega * (yy - cy), omega * (xx - cx))
    width = 0.08 * min(lx, ly)

    def bump(px, py):
        return np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * width**2))

    r0 = 0.18 * min(lx, ly)
    vals = bump(cx + r0, cy)
    ux, uy = g.face_velocities(u)
    rate = float(np.max(g.outflow_rate(grid, ux, uy)))
    t_final = 0.3
    steps = max(1, int(math.ceil(t_final * rate / 0.8)))
    dt = t_final / steps
    for _ in range(steps):
        vals = vals - dt * g.upwind_flux_divergence(vals, grid, ux, uy)
    angle = omega * t_final
    exact = bump(cx + r0 * math.cos(angle), cy + r0 * math.sin(angle))
    return g.l2_norm_arrays(grid, vals - exact)


def convergence_study(base_cfg, resolutions):
    """Manufactured-solution orders for the sub-solvers on nested resolutions.

    Returns {"diffusion": slope, "poisson": ..., "helmholtz": ..., "advection": ...}.
    """
    res = list(resolutions)
    if len(res) < 3:
        raise InvalidInputError("need at least 3 resolutions")
    if len(set(res)) != len(res) or sorted(res) != res:
        raise InvalidInputError("resolutions must be strictly increasing and distinct")
    for a, b in zip(res, res[1:]):
        if b % a != 0:
            raise InvalidInputError("resolutions must be nested (each divides the next)")
    lx, ly = base_cfg.grid.lx, base_cfg.grid.ly
    solver_cfg = elliptic.SolverConfig(tol_rel=1e-11, method=build_solver_config(base_cfg).method)
    hs = [lx / n for n in res]
    orders = {
        "diffusion": _observed_order(hs, [_heat_error(n, lx, ly, solver_cfg) for n in res]),
        "poisson": _observed_order(hs, [_poisson_error(n, lx, ly, solver_cfg) for n in res]),
        "helmholtz": _observed_order(hs, [_helmholtz_error(n, lx, ly, 0.3, solver_cfg) for n in res]),
        "advection": _observed_order(hs, [_advection_error(n, lx, ly) for n in res]),
    }
    return orders


def format_orders_csv(orders):
    lines = ["solver,observed_order"]
    for k in ("diffusion", "poisson", "helmholtz", "advection"):
        lines.append(f"{k},{format(orders[k], '.6g')}")
    return "\n".join(lines) + "\n"
