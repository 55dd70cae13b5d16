"""Exception types shared across the package.

Every error raised by the library derives from :class:`GridCascadeError`, so
callers (and the CLI) can distinguish library failures from programming bugs.
"""

from __future__ import annotations


class GridCascadeError(Exception):
    """Base class for all library errors."""


# --- network construction / validation ---

class InvalidRecord(GridCascadeError):
    """A bus or line record violates a basic field invariant."""


class DuplicateId(GridCascadeError):
    """Two buses or two lines share an id."""


class DanglingEndpoint(GridCascadeError):
    """A line references a bus id that does not exist."""


class UnbalancedBase(GridCascadeError):
    """Base injections do not sum to zero on some connected component."""


class NegativeSusceptance(GridCascadeError):
    """A line susceptance is not strictly positive."""


class BaseFlowExceedsLimit(GridCascadeError):
    """|base flow| > thermal limit, so deviation bounds would not bracket 0."""

    def __init__(self, message: str, line_ids: tuple[int, ...] = ()):
        super().__init__(message)
        self.line_ids = line_ids


class UnknownLine(GridCascadeError):
    """A line id does not exist or is out of service where required."""


# --- topology ---

class PartitionMismatch(GridCascadeError):
    """A partition is not the bridge-block decomposition; details attached."""

    def __init__(self, message: str, offending_buses=(), offending_lines=()):
        super().__init__(message)
        self.offending_buses = tuple(offending_buses)
        self.offending_lines = tuple(offending_lines)


class CreatesOverload(GridCascadeError):
    """A planning-phase switch-off would congest the listed lines."""

    def __init__(self, message: str, line_ids: tuple[int, ...]):
        super().__init__(message)
        self.line_ids = tuple(line_ids)


class DisconnectsLoad(GridCascadeError):
    """A switch-off creates an island whose base injections cannot balance."""


# --- linear solves / optimization ---

class Unbalanced(GridCascadeError):
    """Right-hand side of a Laplacian system does not sum to zero per component."""


class Singular(GridCascadeError):
    """A linear system factorization failed unexpectedly."""


class Infeasible(GridCascadeError):
    """An optimization problem has no feasible point.

    Carries the phase-1 certificate when one was computed.
    """

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class DispatchInfeasible(Infeasible):
    """A perturbed load profile cannot be dispatched within limits."""


class NumericalFailure(GridCascadeError):
    """An iterative solver failed to make progress."""


class NonFiniteValue(NumericalFailure):
    """An iterate became NaN/inf; `where` distinguishes primal from dual."""

    def __init__(self, message: str, where: str):
        super().__init__(message)
        self.where = where  # 'primal' | 'dual'


# --- cascade / studies ---

class StageCapExceeded(GridCascadeError):
    """A cascade exceeded its stage cap; the partial trace is attached."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class InsufficientCapacity(GridCascadeError):
    """Requested generation reserve exceeds the physical bound ceilings."""


class TooManyRequested(GridCascadeError):
    """More failure subsets requested than exist."""


# --- case files ---

class CaseSyntaxError(GridCascadeError):
    """Case file is not parseable; carries line/column when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        super().__init__(message)
        self.line = line
        self.col = col


class SchemaViolation(GridCascadeError):
    """Case document violates the schema; `path` locates the offender."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class VersionUnsupported(GridCascadeError):
    """Case document declares a schema version this build does not read."""


class UnsupportedField(GridCascadeError):
    """A case field would change the DC semantics and cannot be honored."""
