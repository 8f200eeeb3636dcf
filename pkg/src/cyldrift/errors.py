"""Exception types shared across the package."""


class CyldriftError(Exception):
    """Base class for all package errors."""


class NoConvergence(CyldriftError):
    """An iterative solver stalled or hit its iteration cap."""

    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class OutOfBand(CyldriftError):
    """A point left the configured action band."""


class EscapedChannel(CyldriftError):
    """An orbit left the normal channel around the cylinder."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class GapViolation(CyldriftError):
    """The normal-hyperbolicity rate condition alpha^2 * lambda < 1 failed."""


class GraphFold(CyldriftError):
    """An iterated graph stopped being single-valued over its chart."""


class ContinuationFailed(CyldriftError):
    """Newton continuation of an invariant object broke down."""


class DomainExceeded(CyldriftError):
    """A requested evaluation fell outside a sampled object's domain."""


class BandOverflow(CyldriftError):
    """A curve under iteration reached the top of the working band."""


class GenerationLimit(CyldriftError):
    """Curve evolution neither connected nor stalled within the generation cap."""

    def __init__(self, msg, generations=None, last_curve=None):
        super().__init__(msg)
        self.generations = generations
        self.last_curve = last_curve


class NotFound(CyldriftError):
    """A search (return time, intersection, ...) found nothing in range."""


class FewerFound(CyldriftError):
    """Fewer objects than requested survived; the survivors are attached."""

    def __init__(self, msg, found):
        super().__init__(msg)
        self.found = found


class PaddingFailed(CyldriftError):
    """No recurrence time compatible with the properness floors exists in range."""


class ShootingFailed(CyldriftError):
    """The channel-orbit shooting could not match the requested code."""


class ConfigError(CyldriftError):
    """An experiment configuration is missing, malformed, or inconsistent."""


class BoundViolated(CyldriftError):
    """Measured station deviations exceed the a priori bound by more than 2x."""

    def __init__(self, msg, deviations=None, bound=None):
        super().__init__(msg)
        self.deviations = deviations
        self.bound = bound
