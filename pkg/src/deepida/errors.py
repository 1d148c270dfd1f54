"""Exception hierarchy.

Every error raised by the package derives from :class:`DeepIdaError`, whose
class name doubles as the machine-parsable error tag printed by the CLI.
"""


class DeepIdaError(Exception):
    """Base class for all package errors."""


class InvalidInput(DeepIdaError, ValueError):
    pass


class NumericalFailure(DeepIdaError, ArithmeticError):
    pass


class SingularMatrix(NumericalFailure):
    pass


class InvalidLabels(DeepIdaError, ValueError):
    pass


class ShapeMismatch(DeepIdaError, ValueError):
    pass


class InvalidSpec(DeepIdaError, ValueError):
    pass


class InvalidBatch(DeepIdaError, ValueError):
    pass


class InvalidTape(DeepIdaError, RuntimeError):
    pass


class InvalidConfig(DeepIdaError, ValueError):
    pass


class StratificationFailure(DeepIdaError, RuntimeError):
    pass


class PairFailed(DeepIdaError, RuntimeError):
    def __init__(self, index, cause=None):
        super().__init__(f"bootstrap pair {index} failed: {cause}")
        self.index = index
        self.cause = cause


class NoResults(DeepIdaError, RuntimeError):
    pass


class InvalidSelection(DeepIdaError, ValueError):
    pass


class ParseError(DeepIdaError, ValueError):
    pass


class IoError(DeepIdaError, OSError):
    pass
