"""The evolving unknown of the coupled system."""

from __future__ import annotations

from dataclasses import dataclass

from .grid import ScalarField, VectorField


@dataclass
class SimState:
    """Time plus the four fields (n, c, u, P) at that time."""

    t: float
    n: ScalarField
    c: ScalarField
    u: VectorField
    p: ScalarField

    def copy(self):
        return SimState(self.t, self.n.copy(), self.c.copy(), self.u.copy(), self.p.copy())
