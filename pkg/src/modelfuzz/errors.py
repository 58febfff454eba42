"""Exception types shared across the package.

Everything raised intentionally by this library derives from FuzzError so
callers can catch one base class at the campaign boundary.
"""

from __future__ import annotations


class FuzzError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(FuzzError):
    """An operator cannot accept the shapes flowing into it."""


class UnreachableVertex(FuzzError):
    """A vertex is not reachable from any entry during shape inference."""


class InvalidBlock(FuzzError):
    """A block failed structural validation where a valid one was required."""


class EmptyCandidates(FuzzError):
    """Weighted selection was asked to draw from an empty candidate list."""


class NoCompatibleOperator(FuzzError):
    """The operator catalog has fewer than two arity-compatible kinds."""


class NoMutableEdge(FuzzError):
    """A block offers no unary operator edge to mutate."""


class SlotMismatch(FuzzError):
    """A component was offered for a sketch slot it cannot fill."""


class ChannelMismatch(FuzzError):
    """Per-port channel dims of adjacent components disagree."""

    def __init__(self, message: str, rule: str = "") -> None:
        super().__init__(message)
        self.rule = rule


class PortCountMismatch(FuzzError):
    """Adjacent components declare different port counts."""

    def __init__(self, message: str, rule: str = "") -> None:
        super().__init__(message)
        self.rule = rule


class ConfigInvalid(FuzzError):
    """A campaign configuration violates one of its invariants."""


class ManifestMissing(FuzzError):
    """The repository directory has no manifest file."""


class ComponentInvalid(FuzzError):
    """A persisted component failed validation on load or add."""

    def __init__(self, component_id: str, reason: str) -> None:
        super().__init__(f"component {component_id!r}: {reason}")
        self.component_id = component_id
        self.reason = reason


class DuplicateStructure(FuzzError):
    """A component structurally identical to an existing one was added."""

    def __init__(self, existing_id: str) -> None:
        super().__init__(f"structurally identical to existing component {existing_id!r}")
        self.existing_id = existing_id


class LabelSetMismatch(FuzzError):
    """Two output maps do not carry the same label set."""


class EmptyLog(FuzzError):
    """A crash log tokenized to nothing."""


class ProtocolViolation(FuzzError):
    """An external runner produced output that does not parse."""


class UnknownId(FuzzError):
    """A ledger update referenced an id that is not tracked."""


class UnknownScenario(FuzzError):
    """A scenario name is not present in the scenario configuration."""


class DegenerateTarget(FuzzError):
    """An image preprocessing target has a zero-sized side."""


class MissingArtifact(FuzzError):
    """A replay record references a model file that no longer exists."""
