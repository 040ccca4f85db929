"""Figure-eight choreography solver and equivariant bifurcation toolkit."""
from ._backend import BACKEND, USING_NUMBA

__version__ = "0.1.0"

__all__ = ["BACKEND", "USING_NUMBA", "__version__"]
