"""Exception hierarchy shared across the pipeline."""


class ConceptMinerError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(ConceptMinerError):
    """Invalid configuration or unusable command-line input."""


class CorpusError(ConceptMinerError):
    """Corpus-level failure (empty corpus, unusable file)."""


class MissingStatsError(ConceptMinerError):
    """A token was requested that never occurred in the corpus statistics."""


class MappingUndecidableError(ConceptMinerError):
    """None of the indicative relation phrases appear in the trained model."""


class GrammarError(ConceptMinerError):
    """Malformed grammar definition or invalid adaptor parameters."""


class UnparseableYieldError(ConceptMinerError):
    """A token sequence has no derivation under the grammar."""


class GoldError(ConceptMinerError):
    """Gold annotation file references unknown documents or is malformed."""


class PipelineError(ConceptMinerError):
    """A pipeline stage could not run (missing upstream artifact, bad schema)."""
