"""ksns: 2D Keller-Segel-Navier-Stokes simulation with runtime estimate monitors."""

from .grid import GridSpec, ScalarField, VectorField, divergence, gradient, integrate, laplacian, lp_norm
from .state import SimState

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "SimState",
    "laplacian",
    "gradient",
    "divergence",
    "integrate",
    "lp_norm",
    "__version__",
]
