class InvalidInputError(ValueError):
    """Raised for malformed or out-of-contract inputs."""


class DegenerateNormalizationError(InvalidInputError):
    """The indicator cannot be normalized: the reference value is ~0."""


class CorruptWeightsError(InvalidInputError):
    pass


class TrainingDivergedError(RuntimeError):
    pass
