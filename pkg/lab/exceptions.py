class LabError(Exception):
    """Base class for every error raised by the laboratory."""


# ===================================
# Model / covariance side
# ===================================
class OriginEvaluationError(LabError):
    """Raised when a spectral density is evaluated at its singular point u = 0."""


class ModelValidationError(LabError):
    """Raised when a model violates its Hermitian / PSD / evenness / parameter constraints."""


class ResolutionError(LabError):
    """Raised when doubling the quadrature grid moves r(0) by more than the tolerance."""


class TableRangeError(LabError):
    """Raised when a covariance table does not cover the lags an operation needs."""


class InstabilityError(LabError):
    """Raised when per-lag estimates of the angular factor disagree along a ray."""


# ===================================
# Measures and quadrature
# ===================================
class GridIncompatibilityError(LabError):
    """Raised when a target grid's cells are not unions of rescaled source cells."""


class QuadratureError(LabError):
    """Raised when adaptive quadrature does not converge within its subdivision limit."""


class PSDViolationError(LabError):
    """Raised when a cell matrix or quadratic form is negative beyond round-off."""


class DimensionalityError(LabError):
    """Raised when a product-grid quadrature would exceed its dimension or size limit."""


# ===================================
# Sampling
# ===================================
class NonPSDWindowError(LabError):
    """Raised when the block covariance of the sampling window is not PSD."""


class EmbeddingError(LabError):
    """Raised when circulant eigen-matrices are too negative to be clipped."""


class InsufficientReplicatesError(LabError):
    """Raised when an estimator needs more replicates than it was given."""


# ===================================
# Hermite expansions
# ===================================
class DegreeCapError(LabError):
    """Raised when a polynomial exceeds the configured total-degree cap."""


class MalformedSequenceError(LabError):
    """Raised for index sequences that are not non-decreasing or out of range."""


class AssumptionError(LabError):
    """Raised when an inequality is requested outside its hypotheses (psi > 1)."""


class DimensionMismatchError(LabError):
    """Raised when array or expansion dimensions do not agree."""


class NonDiagonalModelError(LabError):
    """Raised when an exact moment formula is requested for a model with cross-correlations."""


# ===================================
# Wiener–Itô side
# ===================================
class KernelDomainError(LabError):
    """Raised when a torus kernel is evaluated outside [-N*pi, N*pi)^nu."""


class ImaginaryResidueError(LabError):
    """Raised when a real-valued multiple integral keeps a non-negligible imaginary part."""


# ===================================
# Harness
# ===================================
class EmptySampleError(LabError):
    """Raised when a statistic receives an empty sample."""


class BudgetExceededError(LabError):
    """Raised when the projected runtime of an experiment exceeds the configured budget."""
