"""Exception and warning types raised across the package."""


class TraceFEMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TraceFEMError, ValueError):
    pass


class DomainError(TraceFEMError, ValueError):
    pass


class DataError(TraceFEMError, ValueError):
    pass


class GeometryError(TraceFEMError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class ProjectionError(TraceFEMError):
    pass


class BandCoverageError(TraceFEMError):
    """A point needed by the scheme lies outside the band of a previous state.

    This is the discrete counterpart of the requirement that the new discrete
    surface is contained in the extension layer of the old one.  Increasing
    ``c_delta`` usually fixes it.
    """

    def __init__(self, message, tet=None):
        super().__init__(message)
        self.tet = tet


class PreconditionerError(TraceFEMError):
    pass


class EstimatorError(TraceFEMError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class CapabilityError(TraceFEMError):
    pass


class ParameterConditionWarning(UserWarning):
    """A sufficient condition on the discretization parameters is violated."""


class SolverWarning(UserWarning):
    pass
