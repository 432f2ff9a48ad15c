"""Universal-mesh conforming triangulations and quasi-static crack propagation."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConformationError, MeshError, PreconditionError,  # noqa: E402
                     PropagationError, RefinementNeededError, SolverError, UnimeshError)
from .geometry import Triangulation, structured_acute_mesh  # noqa: E402
from .curves import CrackPath, Polyline, Spline, fit_spline  # noqa: E402
from .conformer import ConformParams, conform, split_crack  # noqa: E402
from .elasticity import FemMesh, LoadShapes, Material, solve_problem  # noqa: E402
from .fracture import PropagationParams, analyze, interaction_integral, propagate  # noqa: E402

__all__ = [
    "ConfigError", "ConformationError", "MeshError", "PreconditionError", "PropagationError",
    "RefinementNeededError", "SolverError", "UnimeshError", "Triangulation",
    "structured_acute_mesh", "CrackPath", "Polyline", "Spline", "fit_spline", "ConformParams",
    "conform", "split_crack", "FemMesh", "LoadShapes", "Material", "solve_problem",
    "PropagationParams", "analyze", "interaction_integral", "propagate",
]
