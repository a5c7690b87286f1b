"""Exception types shared across the package."""


class SpectralConsensusError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SpectralConsensusError):
    pass


class IsolatedNodeError(SpectralConsensusError):
    """A sampled graph has at least one node with out-degree zero."""

    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"nodes with out-degree 0: {self.nodes[:10]}"
                         + (" ..." if len(self.nodes) > 10 else ""))


class DegenerateModelError(SpectralConsensusError):
    """Model has no randomness or no edges where some are required."""


class NodeTransitivityViolation(SpectralConsensusError):
    """Variance-profile row sums differ across populations."""


class NonConvergenceError(SpectralConsensusError):
    """Fixed-point iteration exhausted its budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DensityFailure(SpectralConsensusError):
    """Too many grid cells failed to converge during density integration."""


class CoverageError(SpectralConsensusError):
    """Target grid is not covered by the mapped source grid."""


class NumericalFailure(SpectralConsensusError):
    """An underlying numerical routine (eigensolver, factorization) failed."""


class PerronFailure(SpectralConsensusError):
    """Left Perron vector not found: eigenvalue 1 not simple or not dominant."""


class McFailure(SpectralConsensusError):
    """Too many Monte-Carlo trials failed."""


class EmptyRegionError(SpectralConsensusError):
    """Density threshold produced an empty filtering region."""


class InfeasibleBaselineError(SpectralConsensusError):
    """Requested baseline filter degree exceeds what the mean spectrum allows."""


class SolverFailure(SpectralConsensusError):
    """Minimax solver stalled before reaching its tolerance."""

    def __init__(self, message, best_coefficients=None, best_value=None):
        super().__init__(message)
        self.best_coefficients = best_coefficients
        self.best_value = best_value


class RateUndefinedError(SpectralConsensusError):
    """Error trajectory carries no usable decay window."""
