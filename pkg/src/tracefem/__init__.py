"""Stabilized trace finite elements for transport-diffusion on evolving surfaces."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BandCoverageError,
    CapabilityError,
    ConfigurationError,
    DataError,
    DegenerateGeometryError,
    DomainError,
    EstimatorError,
    GeometryError,
    ParameterConditionWarning,
    PreconditionerError,
    ProjectionError,
    SolverWarning,
    TraceFEMError,
)
from .mesh import BackgroundMesh, build_mesh  # noqa: E402
from .problem import ProblemSpec, builtin_experiment  # noqa: E402
from .timestepper import RunConfig, run  # noqa: E402
from .postproc import aggregate_norms, eoc  # noqa: E402
