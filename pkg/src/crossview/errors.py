"""Exception hierarchy shared across the engine.

Two broad families matter to callers: ``DataError`` (bad or inconsistent
input, CLI exit code 3) and ``TransportError`` (an endpoint could not be
reached or refused a request, CLI exit code 4).
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class DataError(EngineError):
    """Invalid, malformed, or mutually inconsistent input data."""


class TransportError(EngineError):
    """A network endpoint was unreachable or returned a non-2xx status."""


# --- manifests ---------------------------------------------------------


class ManifestParseError(DataError):
    """Manifest file is not valid JSON or violates the manifest schema."""


class DuplicateIdError(DataError):
    """An identifier appears more than once where uniqueness is required."""


class EmptyManifestError(DataError):
    """Manifest contains no locations."""


class MissingViewError(DataError):
    """A location lacks an image view required to emit a training pair."""


# --- images and embeddings ---------------------------------------------


class BadImageError(DataError):
    """Pixel buffer is malformed, out of range, or unembeddable."""


class GridTooLargeError(DataError):
    """Pooling grid exceeds the image size."""


class ZeroVectorError(DataError):
    """A vector with zero norm cannot be L2-normalized."""


class DimMismatchError(DataError):
    """Vector or matrix dimensions disagree."""


# --- binary file formats ------------------------------------------------


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(DataError):
    """File declares a format version this reader does not understand."""


class TruncatedFileError(DataError):
    """File ends early, or its length disagrees with its declared counts."""


# --- training -----------------------------------------------------------


class BatchMismatchError(DataError):
    """Two embedding batches that must align row-for-row do not."""


class NonFiniteLossError(EngineError):
    """Loss or its gradients evaluated to NaN or infinity."""


class NonFiniteParamError(EngineError):
    """An optimizer step produced a non-finite parameter value."""


class MissingEmbeddingError(DataError):
    """A manifest image reference has no row in the embedding table."""


class TrainingDivergedError(EngineError):
    """Training produced a non-finite loss and cannot continue."""


# --- retrieval and evaluation -------------------------------------------


class EmptyTableError(DataError):
    """An embedding table with no entries cannot be indexed."""


class LengthMismatchError(DataError):
    """A permutation does not fit the candidate list it should reorder."""


class MissingTruthError(DataError):
    """A query has no ground-truth reference id."""


class KMismatchError(DataError):
    """Recall reports being compared were computed at different K values."""


# --- re-ranking ----------------------------------------------------------


class ParseFailure(EngineError):
    """A re-ranking response failed validation.

    ``reason`` is one of the ``ParseFailure.NOT_JSON`` /
    ``MISSING_FIELD`` / ``NOT_PERMUTATION`` / ``WRONG_LENGTH`` constants
    so callers can tell the failure modes apart.
    """

    NOT_JSON = "not_json"
    MISSING_FIELD = "missing_field"
    NOT_PERMUTATION = "not_permutation"
    WRONG_LENGTH = "wrong_length"

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {message}" if message else reason)
