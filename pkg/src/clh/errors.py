"""Exception hierarchy shared across the engine."""


class ClhError(Exception):
    """Base class for all engine errors."""


# taxonomy


class TaxonomyError(ClhError):
    pass


class MalformedCode(TaxonomyError, ValueError):
    pass


class UnknownChapter(TaxonomyError, ValueError):
    pass


class UnknownCode(TaxonomyError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class OrphanNode(TaxonomyError):
    pass


class DuplicateCode(TaxonomyError):
    pass


class PrefixViolation(TaxonomyError):
    pass


class DuplicateChapter(TaxonomyError):
    pass


class MissingGuideline(TaxonomyError):
    pass


class InvalidRecord(TaxonomyError, ValueError):
    pass


# retrieval


class RetrievalError(ClhError):
    pass


class EmptyIndex(RetrievalError):
    pass


class DimensionMismatch(RetrievalError, ValueError):
    pass


class SnapshotError(RetrievalError):
    pass


# backends and parsing


class BackendError(ClhError):
    pass


class BackendUnavailable(BackendError):
    pass


class BackendTimeout(BackendError, TimeoutError):
    pass


class UnparseableResponse(BackendError):
    pass


class ScriptedMiss(BackendError, KeyError):
    """The scripted answer table has no entry for a prompt."""


class MissingSlot(ClhError, KeyError):
    pass


class NoAnswerTag(ClhError, ValueError):
    pass


class NoIntegers(ClhError, ValueError):
    pass


# metrics / experiments / io


class EmptyInput(ClhError, ValueError):
    pass


class MissingStage(ClhError, KeyError):
    pass


class EmptyGold(ClhError, ValueError):
    pass


class TruncatedFile(ClhError):
    pass


class ConfigError(ClhError, ValueError):
    pass
