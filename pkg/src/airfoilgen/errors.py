"""Exception hierarchy shared by all airfoilgen modules."""


class AirfoilGenError(Exception):
    """Base class for all errors raised by this package."""


# --- coordinate file ingestion ---------------------------------------------

class MalformedFile(AirfoilGenError):
    """Coordinate file cannot be parsed (bad rows, too few points)."""


class AmbiguousFormat(AirfoilGenError):
    """Coordinate file layout cannot be classified as Selig or Lednicer."""


class DegenerateChord(AirfoilGenError):
    """Leading and trailing edge coincide; no chord to normalize."""


class NonFunctionSurface(AirfoilGenError):
    """A surface is not single-valued in x after alignment."""


class EmptyDataset(AirfoilGenError):
    """No sample survived parsing and filtering."""


class DegenerateFeature(AirfoilGenError):
    """A feature has zero range over the dataset; cannot min-max normalize."""


# --- curve math -------------------------------------------------------------

class IndexOutOfRange(AirfoilGenError):
    """Basis-function index outside the valid range."""


class InvalidKnots(AirfoilGenError):
    """Knot vector violates length, ordering or clamping requirements."""


class LengthMismatch(AirfoilGenError):
    """Free-variable vector has the wrong length for the requested net."""


class NonMonotoneX(AirfoilGenError):
    """Parametric x(u) is not invertible; cannot resample onto the x-grid."""


class ZeroTangent(AirfoilGenError):
    """Both parametric derivatives vanish at the evaluation point."""


# --- baselines ---------------------------------------------------------------

class SingularSystem(AirfoilGenError):
    """Linear system for polynomial coefficients is ill-conditioned."""


class RankDeficient(AirfoilGenError):
    """Requested more modes than the data matrix rank."""


class FitFailure(AirfoilGenError):
    """Design-vector fitting failed on too large a fraction of the dataset."""


# --- model / training --------------------------------------------------------

class ShapeMismatch(AirfoilGenError):
    """Input array shape does not match the model configuration."""


class UnfittedNormalizer(AirfoilGenError):
    """Feature normalizer required but not fitted."""


class TooFewSamples(AirfoilGenError):
    """Not enough samples to compute a statistic reliably."""


class VersionMismatch(AirfoilGenError):
    """Persisted file was written by an incompatible format version."""


class CorruptFile(AirfoilGenError):
    """Persisted file failed its integrity check."""


class DivergedLoss(AirfoilGenError):
    """Training loss became non-finite and recovery failed."""


class DimOutOfRange(AirfoilGenError):
    """Latent dimension index outside the configured latent space."""


# --- optimization / external solver ------------------------------------------

class InfeasibleBox(AirfoilGenError):
    """Constraint interval lies outside the trained design envelope."""


class EvaluatorFailure(AirfoilGenError):
    """Objective evaluator failed for several whole generations in a row."""


class SolverNotFound(AirfoilGenError):
    """External panel-method solver binary is not available."""
