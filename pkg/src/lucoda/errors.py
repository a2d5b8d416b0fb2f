"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`LucodaError`, grouped by the module that raises it.
"""


class LucodaError(Exception):
    """Base class for all package errors."""


# compositions
class CompositionError(LucodaError, ValueError):
    pass


class AllZeroRow(CompositionError):
    pass


class NegativeEntry(CompositionError):
    pass


class ZeroPart(CompositionError):
    pass


class NotCentered(CompositionError):
    pass


class EmptySubcomposition(CompositionError):
    pass


class ClosureViolation(CompositionError):
    def __init__(self, rows, message=None):
        self.rows = list(rows)
        if message is None:
            shown = ", ".join(str(r) for r in self.rows[:10])
            more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
            message = f"rows violate closure beyond tolerance: {shown}{more}"
        super().__init__(message)


# precision builders
class PrecisionError(LucodaError, ValueError):
    pass


class IsolatedArea(PrecisionError):
    pass


class DisconnectedGraph(PrecisionError):
    pass


class ParameterOutOfRange(PrecisionError):
    pass


class NonStationary(PrecisionError):
    pass


class DimensionMismatch(LucodaError, ValueError):
    pass


class SingularSystem(PrecisionError):
    pass


class NotPositiveDefinite(PrecisionError):
    pass


class FactorizationFailure(LucodaError, RuntimeError):
    pass


# meshes and supports
class MeshError(LucodaError, ValueError):
    pass


class DegenerateBox(MeshError):
    pass


class DegenerateTriangle(MeshError):
    pass


class EmptyArea(LucodaError, ValueError):
    pass


class OutsideMesh(LucodaError, ValueError):
    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(message or f"{len(self.indices)} point(s) fall outside the mesh")


class LatticeOutsideMesh(OutsideMesh):
    pass


class UnmappedTime(LucodaError, ValueError):
    pass


class DegenerateSeeds(LucodaError, ValueError):
    pass


# likelihoods
class BoundaryValue(LucodaError, ValueError):
    pass


class UnexpectedZero(LucodaError, ValueError):
    pass


class PredictorOverflow(LucodaError, OverflowError):
    pass


# inference
class SpecError(LucodaError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NonConvergence(LucodaError, RuntimeError):
    pass


class LineSearchFailure(LucodaError, RuntimeError):
    pass


class InsufficientDraws(LucodaError, ValueError):
    pass


class AllGridPointsFailed(LucodaError, RuntimeError):
    pass


# consensus
class EmptyPartition(LucodaError, ValueError):
    pass


class UninformedElement(LucodaError, ValueError):
    pass


class LayoutMismatch(LucodaError, ValueError):
    pass


class PartitionFitError(LucodaError, RuntimeError):
    """A stage of a sequential fit failed; ``partition`` is its index and
    the original error is chained as ``__cause__``."""

    def __init__(self, partition, message):
        self.partition = partition
        super().__init__(f"partition {partition}: {message}")
