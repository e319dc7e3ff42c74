"""Exception hierarchy shared by all stainforge modules.

Every error that maps to a CLI "data error" (exit code 2) derives from
StainforgeError; usage errors are handled by argparse and exit with 1.
"""


class StainforgeError(Exception):
    """Base class for all stainforge data errors."""


# --- ICC profile parsing / conversion ---------------------------------------

class BadSignature(StainforgeError):
    """Buffer is not an ICC profile ('acsp' signature missing)."""


class UnsupportedProfile(StainforgeError):
    """Profile parsed but is outside the supported matrix/TRC RGB subset."""


class Truncated(StainforgeError):
    """Declared sizes or tag offsets point beyond the end of the buffer."""


class SingularMatrix(StainforgeError):
    """Colorant matrix is too ill-conditioned to invert."""


# --- Stain estimation / deconvolution ---------------------------------------

class MaxIterationsExceeded(StainforgeError):
    """NNLS active-set iteration cap reached without convergence."""


class InsufficientTissue(StainforgeError):
    """Fewer tissue pixels than required for stain vector estimation."""


class DegenerateDistribution(StainforgeError):
    """OD scatter is effectively rank one; only a single stain present."""


class AmbiguousOrdering(StainforgeError):
    """Hematoxylin/eosin ordering tie: red OD components are equal."""


# --- Stain vector library -----------------------------------------------------

class EmptyLibrary(StainforgeError):
    """Sampling was requested from a library with no records."""


class DuplicateSlide(StainforgeError):
    """A record with the same slide_id already exists in the library."""


class SchemaViolation(StainforgeError):
    """Serialized record or manifest row does not match the schema."""


# --- Augmentation pipeline -----------------------------------------------------

class CropLargerThanPatch(StainforgeError):
    """Requested crop size exceeds the patch dimensions."""


class StAdapterFailure(StainforgeError):
    """External scanner-transform adapter failed or returned bad output."""


# --- Evaluation -----------------------------------------------------------------

class EmptyInput(StainforgeError):
    """Metric requested over an empty record sequence."""


class InsufficientPairs(StainforgeError):
    """Intraclass correlation needs at least two measurement pairs."""


class ZeroVariance(StainforgeError):
    """Intraclass correlation undefined: no variance in the measurements."""
