"""Error types raised across the pipeline.

Every error carries a stable machine-readable name (the class name) that the
CLI emits in its error lines, so scripts can match on it.
"""


class AgroforgeError(Exception):
    @property
    def name(self) -> str:
        return type(self).__name__


# ingest
class EmptyDataset(AgroforgeError):
    pass


class DuplicateId(AgroforgeError):
    pass


class UnparseableLabel(AgroforgeError):
    pass


class ClassTooSmall(AgroforgeError):
    pass


# knowledge
class MalformedEntry(AgroforgeError):
    pass


class DuplicateEntry(AgroforgeError):
    pass


class KnowledgeMissing(AgroforgeError):
    pass


# gateway
class BackendUnavailable(AgroforgeError):
    pass


class InvalidRequest(AgroforgeError):
    pass


class ImageUnsupported(AgroforgeError):
    pass


# synthesis
class InvalidQuestionIndex(AgroforgeError):
    pass


class GenerationRejected(AgroforgeError):
    pass


class ParseError(AgroforgeError):
    pass


class MissingDomainAssets(AgroforgeError):
    pass


# corpus
class EmptyConversation(AgroforgeError):
    pass


class InsufficientPool(AgroforgeError):
    pass


# evals
class UnbuildableTask(AgroforgeError):
    pass


class MismatchedTasks(AgroforgeError):
    pass


# expert eval service
class InvalidConfig(AgroforgeError):
    pass


class UnknownSession(AgroforgeError):
    pass


class UnknownItem(AgroforgeError):
    pass


class AlreadyVoted(AgroforgeError):
    pass


# cli
class UsageError(AgroforgeError):
    pass
