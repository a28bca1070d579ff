"""Exception and warning types shared across the package."""


class CutwaveError(Exception):
    """Base class for all package errors."""


class ConfigError(CutwaveError, ValueError):
    """Invalid configuration value or file."""


class NumericalFailure(CutwaveError):
    """Base class for failures the CLI maps to exit code 3."""


# geometry
class GeometryError(CutwaveError):
    pass


class MoreThanTwoCuts(GeometryError):
    """The interface crosses the element boundary more than twice."""


class SameSideCuts(MoreThanTwoCuts):
    """Both crossings lie on the same side of the element."""


class TangentialContact(GeometryError):
    """The level set vanishes at an element corner."""


class DegenerateChord(GeometryError):
    """The two cut points (nearly) coincide."""


class RootFindingError(GeometryError):
    pass


# mesh
class MeshError(CutwaveError):
    pass


class MaxLevelExceeded(MeshError):
    pass


class MergeFailed(MeshError):
    pass


class EtaTooLarge(MeshError):
    """An element of the final mesh violates eta <= 1/2."""


# quadrature
class MappingFold(GeometryError):
    pass


class NonConvexPolygon(GeometryError):
    pass


# fem / assembly
class SingularBlock(NumericalFailure):
    pass


class NotSPD(NumericalFailure):
    pass


# time stepping
class CflViolation(NumericalFailure):
    pass


class CflWarning(RuntimeWarning):
    pass


class OutOfSlab(CutwaveError, ValueError):
    pass


class Diverged(NumericalFailure):
    pass
