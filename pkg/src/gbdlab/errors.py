"""Exception types shared across the package."""


class GbdLabError(Exception):
    """Base class for all package-specific errors."""


class OutsideDomainError(GbdLabError):
    """A query point lies outside the domain box."""


class FacetAmbiguityError(GbdLabError):
    """A query point lies on a jump facet; evaluation is one-sided.

    Offset the point by a small multiple of the facet normal and query again.
    """


class EmptySliceError(GbdLabError):
    """The requested line does not meet the domain with positive length."""


class ResolutionError(GbdLabError):
    """A cube or grid is too coarse/fine relative to the cell spacing."""


class SelectionFailureError(GbdLabError):
    """The rigid-motion fitter exhausted its sampling budget.

    Carries the diagnostics of the best rejected candidate so the caller can
    decide whether to retry with a larger budget or fall back to the
    early-exit behaviour.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ClusteringAmbiguityError(GbdLabError):
    """A cube pair is neither bounded nor diverging under the thresholds."""

    def __init__(self, message, pairs=None):
        super().__init__(message)
        self.pairs = pairs or []


class PartitionConstructionError(GbdLabError):
    """Cross-scale nesting of partition pieces failed."""


class SequenceSpecError(GbdLabError):
    """A generated sequence violates its declared energy budget."""


class DependencyError(GbdLabError):
    """A required intermediate artifact (fits, partition) is missing."""


class ConfigError(GbdLabError):
    """Malformed experiment configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
