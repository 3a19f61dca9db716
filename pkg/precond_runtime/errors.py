"""
Exception hierarchy for the Shadow Preconditioner Runtime.

Every error a runtime module can raise derives from PrecondRuntimeError.
Errors that describe bad values also derive from ValueError, lookups from
KeyError and file problems from OSError, so callers written against the
builtin families keep working.
"""


class PrecondRuntimeError(Exception):
    """Base class for all runtime errors."""
    pass


# Dense linear algebra

class NonFiniteError(PrecondRuntimeError, ValueError):
    """A matrix, gradient or update contains NaN or Inf."""
    pass


class NoConvergenceError(PrecondRuntimeError, ArithmeticError):
    """An iterative eigensolver exhausted its sweep budget."""
    pass


class NotPSDError(PrecondRuntimeError, ValueError):
    """A damped eigenvalue is not strictly positive."""
    pass


class LayoutMismatchError(PrecondRuntimeError, ValueError):
    """A symmetric matrix has the wrong storage layout for the operation."""
    pass


class ShapeMismatchError(PrecondRuntimeError, ValueError):
    """Operand shapes are incompatible."""
    pass


# Optimizer state

class StaleUninitializedError(PrecondRuntimeError):
    """A preconditioner was consumed before its first refresh was installed."""
    pass


# Tier store

class CapacityExhaustedError(PrecondRuntimeError, MemoryError):
    """Eviction cannot free enough unpinned bytes in a tier."""
    pass


class MissingKeyError(PrecondRuntimeError, KeyError):
    """No entry exists for the requested key."""
    pass


class TierIOError(PrecondRuntimeError, OSError):
    """The cold-tier file could not be read, written or verified."""
    pass


class PinnedEntryError(PrecondRuntimeError):
    """A pinned entry cannot be moved out of its tier."""
    pass


class DirtyNotPersistedError(PrecondRuntimeError):
    """Reclaiming an entry whose latest content has not reached the cold tier."""
    pass


# Scheduler

class WorkerPoolDownError(PrecondRuntimeError):
    """The refresh worker pool has been shut down or a job failed."""
    pass


# Topology and collectives

class InvalidLayoutError(PrecondRuntimeError, ValueError):
    """A declared node layout has an empty node or a duplicate rank."""
    pass


class GroupFailureError(PrecondRuntimeError):
    """A simulated rank in a group is unreachable."""
    pass


class RendezvousTimeoutError(PrecondRuntimeError, TimeoutError):
    """Not all group members arrived at a collective in time."""
    pass


# Harness and configuration

class ConfigInvalidError(PrecondRuntimeError, ValueError):
    """A run configuration value is missing, unknown or out of range."""
    pass


class InvariantAuditError(PrecondRuntimeError, AssertionError):
    """A debug audit found a violated runtime invariant."""
    pass


# Metrics

class EmptyTraceError(PrecondRuntimeError, ValueError):
    """A step-time trace has no steps."""
    pass


class MissingAnnotationsError(PrecondRuntimeError, ValueError):
    """A step-time trace lacks barrier or install spans."""
    pass


class NonpositiveRatioError(PrecondRuntimeError, ValueError):
    """An energy ratio is zero or negative."""
    pass


class MissingRunsError(PrecondRuntimeError, FileNotFoundError):
    """No run directories were found to report on."""
    pass


# Run files

class RunOutputError(PrecondRuntimeError, OSError):
    """A run, sweep or report file could not be written."""
    pass
