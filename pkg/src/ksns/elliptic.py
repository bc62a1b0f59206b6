"""Linear solves for implicit diffusion, pressure projection, and velocity smoothing.

Two operator families are supported on the masked grid:

  * compact:  (I - theta * Lap_h) with the 5-point Laplacian, Neumann or
    Dirichlet-zero closure.  Symmetric positive definite for theta > 0.
  * composed: div(grad(.)) built from the centered gradient (Neumann mirror)
    and centered divergence (no-slip closure).  This is the operator the Leray
    projection must invert so that the projected field's divergence equals the
    solve residual exactly.  Symmetric negative semidefinite with a constants
    null space.

Solvers: matrix-free conjugate gradient (default) and a cached sparse-LU
"direct" method for repeated solves on a fixed grid/coefficient, which is what
the time-stepping driver uses at production scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as g
from .errors import InvalidInputError, SolverDivergenceError

CG = "cg"
DIRECT = "direct"


@dataclass(frozen=True)
class SolverConfig:
    tol_rel: float = 1e-8
    max_iter: int | None = None  # None -> 10 * (nx + ny)
    method: str = CG

    def __post_init__(self):
        if not (0.0 < self.tol_rel < 1.0):
            raise InvalidInputError(f"tol_rel must lie in (0, 1), got {self.tol_rel}")
        if self.max_iter is not None and self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if self.method not in (CG, DIRECT):
            raise InvalidInputError(f"unknown solver method '{self.method}'")


DEFAULT_CONFIG = SolverConfig()


def helmholtz_apply(values, grid, theta, bc, bc_value=0.0):
    """(I - theta * Lap_h) under the given closure; zero outside the mask."""
    lap = g.laplacian_array(values, grid, bc, bc_value)
    return np.where(grid.mask, values - theta * lap, 0.0)


def composed_neg_laplacian_apply(values, grid):
    """-div(grad(values)): the PSD operator inverted by the Leray projection."""
    gx, gy = g.gradient_arrays(values, grid, g.NEUMANN)
    return -g.divergence_arrays(gx, gy, grid)


def _subtract_mean(values, grid):
    m = grid.mask
    mean = float(values[m].sum()) / int(m.sum())
    return np.where(m, values - mean, 0.0)


def cg_solve(apply_fn, b, grid, tol_abs, max_iter, x0=None):
    """Matrix-free CG in the cell-area inner product.

    Returns (x, iterations, residual_norm); raises SolverDivergenceError when
    the iteration cap is hit before |r|_2 <= tol_abs.
    """
    x = grid.zeros() if x0 is None else np.where(grid.mask, x0, 0.0)
    r = np.where(grid.mask, b - apply_fn(x), 0.0)
    res = g.l2_norm_arrays(grid, r)
    if res <= tol_abs:
        return x, 0, res
    p = r.copy()
    rs = g.inner(r, r, grid)
    for it in range(1, max_iter + 1):
        ap = apply_fn(p)
        denom = g.inner(p, ap, grid)
        if denom <= 0.0:
            raise SolverDivergenceError("CG hit a non-positive curvature direction", np.sqrt(rs), it)
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = g.inner(r, r, grid)
        res = np.sqrt(rs_new)
        if res <= tol_abs:
            return x, it, res
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverDivergenceError("CG did not converge", res, max_iter)


def _default_max_iter(grid, config):
    return config.max_iter if config.max_iter is not None else 10 * (grid.nx + grid.ny)


# ---------------------------------------------------------------------------
# Sparse assembly (direct method).  Assembled matrices act on the full
# flattened grid; outside-mask rows are identity so outside cells stay zero.
# ---------------------------------------------------------------------------

def _flat_index(grid):
    return np.arange(grid.nx * grid.ny).reshape(grid.nx, grid.ny)


def _neighbor_entries(grid, axis, side):
    """(center_flat, neighbor_flat, neighbor_inside) for every inside cell's face."""
    idx = _flat_index(grid)
    m = grid.mask
    nb_in = np.zeros_like(m)
    nb_idx = np.zeros_like(idx)
    if axis == 0:
        if side > 0:
            nb_in[:-1, :] = m[1:, :]
            nb_idx[:-1, :] = idx[1:, :]
        else:
            nb_in[1:, :] = m[:-1, :]
            nb_idx[1:, :] = idx[:-1, :]
    else:
        if side > 0:
            nb_in[:, :-1] = m[:, 1:]
            nb_idx[:, :-1] = idx[:, 1:]
        else:
            nb_in[:, 1:] = m[:, :-1]
            nb_idx[:, 1:] = idx[:, :-1]
    return idx[m], nb_idx[m], nb_in[m]


def assemble_helmholtz(grid, theta, bc, sigma=1.0):
    """Sparse (sigma * I - theta * Lap_h) matching helmholtz_apply; identity outside."""
    n = grid.nx * grid.ny
    rows, cols, vals = [], [], []
    diag = np.full(n, float(sigma))
    m = grid.mask.ravel()
    for axis, h in ((0, grid.hx), (1, grid.hy)):
        w = theta / h**2
        for side in (+1, -1):
            c, nb, nb_in = _neighbor_entries(grid, axis, side)
            # inside neighbor: off-diagonal -w, diagonal +w
            rows.append(c[nb_in])
            cols.append(nb[nb_in])
            vals.append(np.full(nb_in.sum(), -w))
            diag_add = np.zeros(c.size)
            diag_add[nb_in] = w
            # ghost closure: mirror adds 0, negate adds 2w to the diagonal
            if bc == g.NOSLIP or bc == g.DIRICHLET:
                diag_add[~nb_in] = 2.0 * w
            np.add.at(diag, c, diag_add)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(np.where(m, diag, 1.0))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsc()


def assemble_centered_difference(grid, axis):
    """Sparse centered difference with no-slip closure (one divergence component)."""
    n = grid.nx * grid.ny
    h = grid.hx if axis == 0 else grid.hy
    rows, cols, vals = [], [], []
    for side, sign in ((+1, +0.5 / h), (-1, -0.5 / h)):
        c, nb, nb_in = _neighbor_entries(grid, axis, side)
        rows.append(c[nb_in])
        cols.append(nb[nb_in])
        vals.append(np.full(nb_in.sum(), sign))
        # ghost = -center: the face term folds onto the diagonal with flipped sign
        rows.append(c[~nb_in])
        cols.append(c[~nb_in])
        vals.append(np.full((~nb_in).sum(), -sign))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def assemble_composed_neg_laplacian(grid):
    """Sparse -div(grad(.)) = Dx Dx^T + Dy Dy^T; identity on outside cells."""
    dx = assemble_centered_difference(grid, 0)
    dy = assemble_centered_difference(grid, 1)
    lneg = (dx @ dx.T + dy @ dy.T).tocsc()
    out = ~grid.mask.ravel()
    if out.any():
        n = grid.nx * grid.ny
        ident = sp.coo_matrix((np.ones(out.sum()), (np.flatnonzero(out), np.flatnonzero(out))), shape=(n, n))
        lneg = (lneg + ident).tocsc()
    return lneg


def _pin_dof(mat, grid):
    """Constrain the first inside cell to zero (removes the constants null space)."""
    k = int(np.flatnonzero(grid.mask.ravel())[0])
    mat = mat.tolil()
    mat[k, :] = 0.0
    mat[:, k] = 0.0
    mat[k, k] = 1.0
    return mat.tocsc(), k


def _lu(grid, key, build):
    cache = grid._solver_cache
    if key not in cache:
        cache[key] = spla.splu(build())
    return cache[key]


# ---------------------------------------------------------------------------
# Public solves
# ---------------------------------------------------------------------------

def solve_helmholtz(rhs, theta, bc=None, config=DEFAULT_CONFIG, x0=None, tol_abs=None):
    """Solve (I - theta * Lap_h) f = rhs to config.tol_rel in the discrete L2 norm.

    `bc` is the closure of the unknown (defaults to the rhs field's own bc);
    theta = 0 returns rhs unchanged.
    """
    grid = rhs.grid
    if theta < 0:
        raise InvalidInputError("theta must be >= 0")
    if bc is None:
        bc = rhs.bc
    if theta == 0.0:
        return rhs.copy()
    b = np.where(grid.mask, rhs.values, 0.0)
    b_norm = g.l2_norm_arrays(grid, b)
    target = tol_abs if tol_abs is not None else config.tol_rel * b_norm
    if config.method == DIRECT:
        lu = _lu(grid, ("helmholtz", bc, float(theta)), lambda: assemble_helmholtz(grid, theta, bc))
        x = lu.solve(b.ravel()).reshape(grid.nx, grid.ny)
        x = np.where(grid.mask, x, 0.0)
        res = g.l2_norm_arrays(grid, b - helmholtz_apply(x, grid, theta, bc))
        if res > max(target, 1e-12 * max(b_norm, 1.0)):
            raise SolverDivergenceError("direct Helmholtz solve residual too large", res, 0)
    else:
        x, _, _ = cg_solve(
            lambda v: helmholtz_apply(v, grid, theta, bc),
            b,
            grid,
            target,
            _default_max_iter(grid, config),
            x0=x0,
        )
    out_bc = g.NEUMANN if bc == g.NOSLIP else bc
    return g.ScalarField(grid, x, bc=out_bc)


def solve_poisson_neumann(rhs, config=DEFAULT_CONFIG, operator="compact", x0=None, tol_abs=None):
    """Solve -Lap f = rhs - mean(rhs) with the Neumann closure; zero-mean result.

    operator="compact" uses the 5-point Laplacian (the spec'd Poisson solve);
    operator="composed" uses div(grad(.)) and is what the projection needs.
    """
    grid = rhs.grid
    if operator == "compact":
        apply_fn = lambda v: -g.laplacian_array(v, grid, g.NEUMANN)
        build = lambda: _pin_dof(assemble_helmholtz(grid, 1.0, g.NEUMANN, sigma=0.0), grid)
        key = ("poisson-compact",)
    elif operator == "composed":
        apply_fn = lambda v: composed_neg_laplacian_apply(v, grid)
        build = lambda: _pin_dof(assemble_composed_neg_laplacian(grid), grid)
        key = ("poisson-composed",)
    else:
        raise InvalidInputError(f"unknown poisson operator '{operator}'")

    b = _subtract_mean(np.where(grid.mask, rhs.values, 0.0), grid)
    b_norm = g.l2_norm_arrays(grid, b)
    target = tol_abs if tol_abs is not None else config.tol_rel * b_norm
    if b_norm == 0.0:
        return g.ScalarField(grid, grid.zeros(), bc=g.NEUMANN)

    if config.method == DIRECT:
        mat, pin = _lu_poisson(grid, key, build)
        bv = b.ravel().copy()
        bv[pin] = 0.0
        x = mat.solve(bv).reshape(grid.nx, grid.ny)
        x = _subtract_mean(np.where(grid.mask, x, 0.0), grid)
        res = g.l2_norm_arrays(grid, b - apply_fn(x))
        if res > max(target, 1e-11 * max(b_norm, 1.0)):
            raise SolverDivergenceError("direct Poisson solve residual too large", res, 0)
    else:
        x0_arr = None if x0 is None else _subtract_mean(np.where(grid.mask, x0, 0.0), grid)
        x, _, _ = cg_solve(apply_fn, b, grid, target, _default_max_iter(grid, config), x0=x0_arr)
        x = _subtract_mean(x, grid)
    return g.ScalarField(grid, x, bc=g.NEUMANN)


def _lu_poisson(grid, key, build):
    cache = grid._solver_cache
    if key not in cache:
        mat, pin = build()
        cache[key] = (spla.splu(mat), pin)
    return cache[key]


def dense_operator(apply_fn, grid):
    """Dense matrix of a masked operator by probing unit vectors (test oracle)."""
    m = grid.mask
    flat = np.flatnonzero(m.ravel())
    a = np.zeros((flat.size, flat.size))
    for k, j in enumerate(flat):
        e = np.zeros(grid.nx * grid.ny)
        e[j] = 1.0
        a[:, k] = apply_fn(e.reshape(grid.nx, grid.ny)).ravel()[flat]
    return a
