"""Hybridizable DG (HDG and EDG-HDG) solver for Biot poroelasticity in total-pressure form."""
from .forms import ModelParams, ParameterError
from .mesh import Mesh, MeshError, build_rectangle, build_structured_square, tag_boundary
from .spaces import DofLayout, Variant, build_layout
from .system import BiotSystem, ProblemData, SolutionState, SolverError

__version__ = "0.1.0"

__all__ = ["BiotSystem", "DofLayout", "Mesh", "MeshError", "ModelParams", "ParameterError",
           "ProblemData", "SolutionState", "SolverError", "Variant", "build_layout",
           "build_rectangle", "build_structured_square", "tag_boundary", "__version__"]
