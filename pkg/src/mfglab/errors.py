"""Exception types shared across the package."""


class MfgLabError(Exception):
    """Base class for all package-specific errors."""


class InputShapeError(MfgLabError, ValueError):
    """Array input does not match the grid it is claimed to live on."""


class NonlinearityDomainError(MfgLabError):
    """A pointwise nonlinearity returned a non-finite value."""

    def __init__(self, message, node=None, inputs=None):
        super().__init__(message)
        self.node = node
        self.inputs = inputs


class DensityDomainError(MfgLabError):
    """Synthesized density is non-finite or below the admissible floor."""


class OutsideRadiusError(MfgLabError, ValueError):
    """Initial density lies outside the configured ball Q_R."""


class BlowUpError(MfgLabError):
    """A time sweep produced non-finite coefficients."""

    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class NonConvergenceError(MfgLabError):
    """Picard coupling failed to reach the requested tolerance."""

    def __init__(self, message, defect_history=None):
        super().__init__(message)
        self.defect_history = list(defect_history or [])


class AuditDomainError(MfgLabError, ValueError):
    """Audit corpus violates the configured norm bounds."""


class PartialKernelError(MfgLabError):
    """Some Dirac probe solves failed during kernel extraction."""

    def __init__(self, message, failed_probes=None):
        super().__init__(message)
        self.failed_probes = list(failed_probes or [])


class UnsupportedGridError(MfgLabError, ValueError):
    """Operation requires a full probe grid."""


class CorruptCacheError(MfgLabError):
    """Cached artifact failed its checksum."""


class ConfigError(MfgLabError, ValueError):
    """Run configuration violates a documented invariant."""
