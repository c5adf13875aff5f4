"""Exception and warning types shared across the package."""


class TaxopathError(Exception):
    """Base class for all errors raised by this package."""


# --- ontology ---

class OntologyError(TaxopathError):
    pass


class MalformedRecord(OntologyError):
    pass


class DuplicateDefinition(OntologyError):
    pass


class DanglingDefinition(OntologyError):
    pass


class EmptyGraph(OntologyError):
    pass


class CycleDetected(OntologyError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownNode(OntologyError):
    pass


class RootHasNoParentPath(OntologyError):
    pass


# --- corpus / embeddings ---

class CorpusError(TaxopathError):
    pass


class TooFewLeaves(CorpusError):
    pass


class EmbeddingError(TaxopathError):
    pass


class DimensionMismatch(EmbeddingError):
    pass


class MalformedLine(EmbeddingError):
    pass


# --- numerics / model ---

class ShapeMismatch(TaxopathError):
    pass


class IndexOutOfRange(TaxopathError):
    pass


class SourceTooLong(TaxopathError):
    pass


class EmptyBatch(TaxopathError):
    pass


class VocabMismatch(TaxopathError):
    pass


class NumericFailure(TaxopathError):
    """Non-finite loss or gradients during training."""


class CheckpointError(TaxopathError):
    """Unreadable or corrupt saved-model container."""


# --- evaluation ---

class DegenerateInput(TaxopathError):
    pass


# --- cli ---

class ConfigError(TaxopathError):
    pass


# --- warnings ---

class TaxopathWarning(UserWarning):
    pass


class MissingDefinitionWarning(TaxopathWarning):
    pass


class TruncationWarning(TaxopathWarning):
    pass


class RankDeficientWarning(TaxopathWarning):
    pass
