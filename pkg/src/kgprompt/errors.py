"""Exception hierarchy shared by all kgprompt modules.

Each exception carries the CLI exit code it maps to: 1 for I/O problems,
2 for validation failures, 3 for runtime failures.
"""


class KGPromptError(Exception):
    exit_code = 3


class ValidationError(KGPromptError):
    exit_code = 2


class IOFailure(KGPromptError):
    exit_code = 1


# -- knowledge graph / files -------------------------------------------------

class MalformedFile(ValidationError):
    pass


class DanglingReference(ValidationError):
    pass


class EmptyCategory(ValidationError):
    pass


class UnknownCategory(ValidationError):
    pass


class CategoryMismatch(ValidationError):
    pass


# -- network clients ---------------------------------------------------------

class NetworkError(KGPromptError):
    pass


class UnparseableResponse(KGPromptError):
    pass


class EmptyResponse(KGPromptError):
    pass


# -- numerics ----------------------------------------------------------------

class DimensionMismatch(ValidationError):
    pass


class EncoderFailure(KGPromptError):
    pass


class IndivisibleGrid(ValidationError):
    pass


class BackendUnavailable(KGPromptError):
    pass


class NonPositiveTemperature(ValidationError):
    pass


class NonFiniteGradient(KGPromptError):
    pass


class NonFiniteUpdate(KGPromptError):
    pass


class NonFiniteLoss(KGPromptError):
    pass


# -- evaluation --------------------------------------------------------------

class EmptyClass(ValidationError):
    pass


class UnreachableOperatingPoint(KGPromptError):
    pass


class TooFewSubjects(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
