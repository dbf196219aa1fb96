"""Exception hierarchy shared by all em2d modules."""


class Em2dError(Exception):
    """Base class for all em2d errors."""


class InvalidParameter(Em2dError, ValueError):
    pass


class DegenerateElement(Em2dError):
    pass


class ParseError(Em2dError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidGeometry(Em2dError):
    pass


class CouplingError(Em2dError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class InteriorResonance(Em2dError):
    pass


class NumericalFailure(Em2dError):
    pass


class SingularSystem(Em2dError):
    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class ConfigError(Em2dError):
    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class NearBoundaryWarning(UserWarning):
    """Sample point too close to a contour for the regular quadrature rule."""
