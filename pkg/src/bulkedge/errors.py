"""Exception taxonomy. Every failure mode callers are expected to handle gets
its own class; all inherit from BulkEdgeError."""


class BulkEdgeError(Exception):
    """Base class for all library errors."""


class DomainError(BulkEdgeError):
    """Argument outside its mathematical domain (e.g. non-unit-modulus angle)."""


class ConfigError(BulkEdgeError):
    """Invalid model or run configuration."""


class ParseError(ConfigError):
    """Config text could not be parsed; message carries field diagnostics."""


class GapError(BulkEdgeError):
    """Fermi level touches the spectrum, or a gap certificate is required but absent."""


class ContourError(BulkEdgeError):
    """Contour validation failed or the resolvent is near-singular at a node."""

    def __init__(self, msg, z=None, eta=None, t=None):
        super().__init__(msg)
        self.z = z
        self.eta = eta
        self.t = t


class ConditioningError(BulkEdgeError):
    """Ambiguous numerical kernel dimension; carries the singular-value profile."""

    def __init__(self, msg, singular_values=None):
        super().__init__(msg)
        self.singular_values = singular_values


class RefineGridError(BulkEdgeError):
    """Result not trustworthy at this discretization; retry with a finer grid."""


class FlowError(RefineGridError):
    """Branch matching or Phillips partition failed; refine the t-grid."""


class ModelError(BulkEdgeError):
    """No admissible truncation parameter exists for this model."""


class UnsupportedModelError(BulkEdgeError):
    """Operation requires hypotheses the model does not satisfy
    (e.g. invertible extreme hopping matrices)."""


class SpectralLocalizationError(BulkEdgeError):
    """Transfer-matrix spectrum touches the unit circle; z is too close to the
    bulk spectrum to split decaying from growing solutions."""


class InconsistentFiberError(BulkEdgeError):
    """A putative kernel-bundle fiber fails the defining residual equations."""
