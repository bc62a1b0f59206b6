"""Runtime functionals, the windowed ODE-comparison checker, and blow-up detection.

Every record carries the monitored quantities of the analysis: masses of n and
c, the energy-like functional E = integral(n^(1+alpha)) + integral(|grad c|^2),
sup norms, kinetic energy and enstrophy of u, and the divergence residual.
The checker implements the comparison bound

    y' + A y <= h,  windowed integral of h <= B
        =>  y(t) <= max(y0 + B, B / (A tau) + 2 B)

with B estimated from sampled h by sliding trapezoidal windows.  The energy
monitor fits the smallest constants (C_a, C_b) with
dE/dt <= C_a * enstrophy * E + C_b over a run and re-verifies them sample by
sample; constants are fitted, never asserted a priori.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np
from scipy.optimize import linprog

from . import grid as g
from .errors import InvalidInputError, NumericalBreakdownError


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass_n: float
    mass_c: float
    norm_n_1pa: float
    grad_c_sq: float
    energy: float
    sup_n: float
    sup_grad_c: float
    kinetic: float
    enstrophy: float
    div_residual: float
    min_n: float
    min_c: float

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in dc_fields(self))


RECORD_FIELDS = tuple(f.name for f in dc_fields(DiagnosticsRecord))


def compute_record(state, alpha):
    """All monitored functionals of one state snapshot; pure and deterministic."""
    grid = state.n.grid
    for name, ok in (("n", state.n.is_finite()), ("c", state.c.is_finite()),
                     ("u", state.u.is_finite()), ("p", state.p.is_finite())):
        if not ok:
            raise NumericalBreakdownError(name)
    mass_n = g.integrate(state.n)
    mass_c = g.integrate(state.c)
    n_abs = np.abs(state.n.values)
    norm_n_1pa = g.integrate_array(n_abs ** (1.0 + alpha), grid)
    gcx, gcy = g.gradient_arrays(state.c.values, grid, state.c.bc, state.c.bc_value)
    grad_c_sq = g.l2_norm_arrays(grid, gcx, gcy) ** 2
    m = grid.mask
    sup_n = float(np.max(n_abs[m]))
    sup_grad_c = float(np.max(np.sqrt(gcx[m] ** 2 + gcy[m] ** 2)))
    kinetic = 0.5 * g.l2_norm_arrays(grid, state.u.u1, state.u.u2) ** 2
    d1x, d1y, d2x, d2y = g.vector_gradient_arrays(state.u)
    enstrophy = g.l2_norm_arrays(grid, d1x, d1y, d2x, d2y) ** 2
    div_residual = g.l2_norm_arrays(grid, g.divergence_arrays(state.u.u1, state.u.u2, grid))
    return DiagnosticsRecord(
        t=state.t,
        mass_n=mass_n,
        mass_c=mass_c,
        norm_n_1pa=norm_n_1pa,
        grad_c_sq=grad_c_sq,
        energy=norm_n_1pa + grad_c_sq,
        sup_n=sup_n,
        sup_grad_c=sup_grad_c,
        kinetic=kinetic,
        enstrophy=enstrophy,
        div_residual=div_residual,
        min_n=float(np.min(state.n.values[m])),
        min_c=float(np.min(state.c.values[m])),
    )


# ---------------------------------------------------------------------------
# Windowed ODE comparison bound
# ---------------------------------------------------------------------------

@dataclass
class GronwallInput:
    """Uniformly sampled series y(t), h(t) with decay rate A and window sigma."""

    t: np.ndarray
    y: np.ndarray
    h: np.ndarray
    decay_rate: float  # A > 0
    sigma: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.t.size == 0:
            raise InvalidInputError("empty series")
        if not (self.t.size == self.y.size == self.h.size):
            raise InvalidInputError("t, y, h must have equal length")
        if self.decay_rate <= 0:
            raise InvalidInputError("decay rate A must be > 0")
        if self.sigma <= 0:
            raise InvalidInputError("window sigma must be > 0")
        if np.any(self.y < 0) or np.any(self.h < 0):
            raise InvalidInputError("y and h must be nonnegative")
        if self.t.size > 1:
            dts = np.diff(self.t)
            if not np.allclose(dts, dts[0], rtol=1e-8, atol=1e-14):
                raise InvalidInputError("samples must be uniformly spaced")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def window_bound(self):
        """B = sup over sliding windows of length sigma of the trapezoid integral of h."""
        if self.t.size < 2:
            return 0.0
        dt = self.dt
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self.h[1:] + self.h[:-1]) * dt)])
        m = max(1, int(round(self.sigma / dt)))
        if m >= self.t.size:
            return float(cum[-1])
        return float(np.max(cum[m:] - cum[:-m]))


def gronwall_bound(gr_input, tau=None):
    """max(y0 + B, B / (A tau) + 2 B) with B from the sampled source term."""
    if tau is None:
        tau = gr_input.sigma
    if tau <= 0:
        raise InvalidInputError("tau must be > 0")
    b = gr_input.window_bound()
    y0 = float(gr_input.y[0])
    return max(y0 + b, b / (gr_input.decay_rate * tau) + 2.0 * b)


@dataclass(frozen=True)
class GronwallVerdict:
    holds: bool
    bound: float
    violation_time: float | None = None


def check_gronwall(gr_input, tau=None, rtol=1e-7, atol=1e-12):
    """Verify the sampled y stays below the comparison bound (ties count as holding)."""
    bound = gronwall_bound(gr_input, tau)
    limit = bound * (1.0 + rtol) + atol
    bad = np.flatnonzero(gr_input.y > limit)
    if bad.size:
        return GronwallVerdict(False, bound, float(gr_input.t[bad[0]]))
    return GronwallVerdict(True, bound)


# ---------------------------------------------------------------------------
# Energy-inequality monitor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonitorReport:
    c_a: float
    c_b: float
    satisfied_fraction: float
    n_samples: int


def energy_inequality_monitor(records, rtol=1e-9):
    """Fit the smallest (C_a, C_b) with dE/dt <= C_a * enstrophy * E + C_b.

    dE/dt uses central differences at interior samples and one-sided at the
    ends.  The fit minimizes mean(enstrophy * E) * C_a + C_b over the feasible
    set (a two-variable linear program), then re-checks every sample against
    the fitted constants and reports the satisfied fraction.
    """
    if len(records) < 3:
        raise InvalidInputError("monitor needs at least 3 records")
    t = np.array([r.t for r in records])
    e = np.array([r.energy for r in records])
    ens = np.array([r.enstrophy for r in records])
    dts = np.diff(t)
    if not np.allclose(dts, dts[0], rtol=1e-8, atol=1e-14):
        raise InvalidInputError("records must be uniformly spaced in time")
    dt = dts[0]
    dedt = np.empty_like(e)
    dedt[1:-1] = (e[2:] - e[:-2]) / (2.0 * dt)
    dedt[0] = (e[1] - e[0]) / dt
    dedt[-1] = (e[-1] - e[-2]) / dt

    x = ens * e
    res = linprog(
        c=[float(np.mean(x)), 1.0],
        A_ub=np.column_stack([-x, -np.ones_like(x)]),
        b_ub=-dedt,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise InvalidInputError(f"constant fit failed: {res.message}")
    c_a, c_b = float(res.x[0]), float(res.x[1])
    scale = max(1.0, float(np.max(np.abs(dedt))))
    ok = dedt <= c_a * x + c_b + rtol * scale
    return MonitorReport(c_a, c_b, float(np.mean(ok)), len(records))


# ---------------------------------------------------------------------------
# Blow-up detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlowupThresholds:
    sup_n_max: float = np.inf
    sup_grad_c_max: float = np.inf
    growth_ratio: float = np.inf  # per-record multiplicative growth trigger

    def __post_init__(self):
        if self.sup_n_max <= 0 or self.sup_grad_c_max <= 0 or self.growth_ratio <= 0:
            raise InvalidInputError("thresholds must be positive")


@dataclass(frozen=True)
class BlowupVerdict:
    ok: bool
    reason: str | None = None


def blowup_detector(record, thresholds, prev_record=None):
    """Flag non-finite or threshold-crossing sup norms, or too-fast growth."""
    if not np.isfinite(record.sup_n) or not np.isfinite(record.sup_grad_c):
        return BlowupVerdict(False, "non-finite sup norm")
    if record.sup_n > thresholds.sup_n_max:
        return BlowupVerdict(False, f"sup_n = {record.sup_n:.3e} exceeds {thresholds.sup_n_max:.3e}")
    if record.sup_grad_c > thresholds.sup_grad_c_max:
        return BlowupVerdict(
            False, f"sup_grad_c = {record.sup_grad_c:.3e} exceeds {thresholds.sup_grad_c_max:.3e}")
    if prev_record is not None and np.isfinite(thresholds.growth_ratio):
        if prev_record.sup_n > 0 and record.sup_n > thresholds.growth_ratio * prev_record.sup_n:
            return BlowupVerdict(
                False, f"sup_n grew by {record.sup_n / prev_record.sup_n:.2f}x in one record")
    return BlowupVerdict(True)
