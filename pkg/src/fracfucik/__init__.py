"""Fractional Laplacian discretisation, Fucik spectrum and critical-growth linking solver."""
from .mesh import Mesh, MeshConfig, build_mesh
from .operator import DiscreteOperator, QuadratureError, assemble
from .spectrum import EigenDecomposition, eigensolve, split

__version__ = "0.1.0"

__all__ = ["Mesh", "MeshConfig", "build_mesh", "DiscreteOperator", "QuadratureError", "assemble",
           "EigenDecomposition", "eigensolve", "split", "__version__"]
