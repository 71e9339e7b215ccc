"""Exception hierarchy shared across the package."""


class LocalSDFError(Exception):
    """Base class for all package errors."""


class ParseError(LocalSDFError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCloud(LocalSDFError):
    pass


class DegenerateCloud(LocalSDFError):
    pass


class CountOutOfRange(LocalSDFError):
    pass


class BadShapeParam(LocalSDFError):
    pass


class SingularFit(LocalSDFError):
    pass


class BadArchitecture(LocalSDFError):
    pass


class BadRadius(LocalSDFError):
    pass


class ShapeMismatch(LocalSDFError):
    pass


class TapeConsumed(LocalSDFError):
    pass


class AlphaTooSmall(LocalSDFError):
    pass


class NonpositiveExtent(LocalSDFError):
    pass


class NonpositiveRadius(LocalSDFError):
    pass


class EmptySubfield(LocalSDFError):
    pass


class EmptyBatch(LocalSDFError):
    pass


class ZeroLatent(LocalSDFError):
    pass


class EmptySet(LocalSDFError):
    pass


class NonFiniteLoss(LocalSDFError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite loss at iteration {iteration}")


class VersionMismatch(LocalSDFError):
    pass


class NoOverlap(LocalSDFError):
    pass


class NotInsideCube(LocalSDFError):
    pass


class DegenerateMesh(LocalSDFError):
    pass


class BadNormals(LocalSDFError):
    pass
