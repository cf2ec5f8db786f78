"""Interior penalty dG for two-compartment advection-diffusion-reaction systems
coupled by Kedem-Katchalsky membrane conditions."""
from .fespace import DGSpace
from .interface import InterfaceModel
from .mesh import Domain2D, FaceKind, Mesh, build_structured_mesh, refine_uniform
from .operators import Discretization
from .problem import BoundarySpec, ProblemDefinition, constant_field
from .stepper import SchemeConfig, integrate

__all__ = [
    "BoundarySpec", "DGSpace", "Discretization", "Domain2D", "FaceKind", "InterfaceModel",
    "Mesh", "ProblemDefinition", "SchemeConfig", "build_structured_mesh", "constant_field",
    "integrate", "refine_uniform",
]
__version__ = "0.1.0"
