"""Exception types shared across the toolkit."""


class CollusionScanError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CollusionScanError):
    """Malformed input file. Carries an optional locus (file / line / field)."""

    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class ConsistencyError(CollusionScanError):
    """Descriptor violates a cross-field invariant (e.g. storage channel without permission)."""


class SizeExceeded(CollusionScanError):
    """Input too large for a brute-force oracle path."""


class ConfigError(CollusionScanError):
    """Bad permission-map / criticality / pipeline configuration."""


class VocabularyMismatch(CollusionScanError):
    """Permission vector does not share the model's vocabulary."""


class EmptyTrainingSet(CollusionScanError):
    """Training requires at least one sample."""


class EmptyAppSet(CollusionScanError):
    """Scoring requires a non-empty app set."""


class DegenerateMatrix(CollusionScanError):
    """Confusion matrix has a zero denominator for the requested metric."""


class StuckState(CollusionScanError):
    """Interpreter hit a malformed instruction."""


class UndefinedRegister(CollusionScanError):
    """A register was read before any value was bound to it."""


class NodeNotFound(CollusionScanError):
    """Data-flow graph query referenced a node that is not in the graph."""


class StateLimitExceeded(CollusionScanError):
    """Exploration exceeded the configured state budget."""
