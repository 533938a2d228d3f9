"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 1 for validation
problems, 2 for I/O and transport failures.
"""


class FacetError(Exception):
    exit_code = 1


class ValidationError(FacetError, ValueError):
    exit_code = 1


class IOFailure(FacetError, OSError):
    exit_code = 2


# core_store
class ZeroVector(ValidationError):
    pass


class NormError(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class UnknownId(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimMismatch(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class StoreIOError(IOFailure):
    pass


# benchmark
class InvariantViolation(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class UnknownCase(ValidationError):
    pass


# prompts
class MalformedQuestion(ValidationError):
    pass


class ValidationFailed(ValidationError):
    pass


class UnparseableAnswer(ValidationError):
    pass


class GeneratorUnavailable(IOFailure):
    pass


class SelectorUnavailable(IOFailure):
    pass


# providers
class UnknownImage(ValidationError):
    pass


class UnknownFacet(ValidationError):
    pass


class Unsupported(ValidationError):
    pass


class ProviderUnavailable(IOFailure):
    pass


class TransportError(ProviderUnavailable):
    pass


class BadResponse(IOFailure):
    pass


# approx / harness / synth
class EmptyPool(ValidationError):
    pass


class MissingPrompt(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class InsufficientNegatives(ValidationError):
    def __init__(self, facet, value, available, needed):
        self.facet = facet
        self.value = value
        self.available = available
        self.needed = needed
        super().__init__(
            f"facet {facet!r} value {value!r}: only {available} admissible negatives, "
            f"need {needed}"
        )
