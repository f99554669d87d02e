"""
Error categories shared by the services and mapped to exit codes by the CLI
"""


class TrackingError(Exception):
    """Base class for every error raised by the tracking pipeline"""


class ValidationError(TrackingError, ValueError):
    """Bad argument, schema violation or out-of-range value"""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class GeometryError(ValidationError):
    """Anchor set cannot determine a 2D position (too few or collinear)"""


class ShapeError(ValidationError):
    """Tensor shapes are incompatible for an operation"""

    def __init__(self, op, shape_a, shape_b):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class TraceParseError(ValidationError):
    """Malformed trace file; carries the 1-based line number"""

    def __init__(self, message, line_number):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class NumericalError(TrackingError, ArithmeticError):
    """Non-finite values appeared in a computation"""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
