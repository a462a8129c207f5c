"""Threshold dynamics of the energy-critical focusing radial NLS, N = 3, 4, 5."""
from .grid import RadialGrid, make_grid, reference_grid
from .ground_state import ground_state, eval_W, eval_W1
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["RadialGrid", "make_grid", "reference_grid", "ground_state", "eval_W", "eval_W1",
           "BACKEND"]
