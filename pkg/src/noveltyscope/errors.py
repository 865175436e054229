"""Exception hierarchy shared across the pipeline."""


class NoveltyScopeError(Exception):
    """Base class for all pipeline errors."""


class ProviderUnavailable(NoveltyScopeError):
    """A remote provider (scholarly, chat, embed, rerank) could not be reached."""


class TargetNotFound(NoveltyScopeError):
    """The target paper could not be resolved by the scholarly provider."""


class CapacityTooSmall(NoveltyScopeError):
    """Corpus capacity is below the number of first-order references."""


class EmptyCorpus(NoveltyScopeError):
    """An index build was attempted over zero chunks."""


class EmptyDocument(NoveltyScopeError):
    """Chunking was attempted on a document with no indexable text."""


class DimensionMismatch(NoveltyScopeError):
    """An embedding provider returned vectors of inconsistent dimension."""


class MalformedOutput(NoveltyScopeError):
    """A model response could not be parsed after the allowed retry."""


class BudgetExceeded(NoveltyScopeError):
    """A prompt exceeded the context budget and truncation was disabled."""


class StructureViolation(NoveltyScopeError):
    """A whole-report rewrite broke a structural preservation contract."""


class EmptyAnswers(NoveltyScopeError):
    """Dimension scoring was attempted on an empty answer list."""


class MissingDimension(NoveltyScopeError):
    """Overall aggregation is missing one or more dimensions."""


class MissingClassAnnotations(NoveltyScopeError):
    """Faithfulness items lack target/cited class annotations."""


class IncompleteMatrix(NoveltyScopeError):
    """The cross-validation score matrix has missing cells or too few rows."""


class ConfigError(NoveltyScopeError):
    """The run configuration file is missing, unreadable, or invalid."""
