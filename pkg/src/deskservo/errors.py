"""Exception types shared across the package."""


class DeskServoError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateProjection(DeskServoError):
    """Homogeneous w component vanished; the point cannot be (un)projected."""


class ZeroLengthSegment(DeskServoError):
    """A track segment has zero length."""


class NonPositiveDt(DeskServoError):
    """Integration step must be strictly positive."""


class NonMonotonicTimestamp(DeskServoError):
    """Log timestamps must be strictly increasing."""


class OutOfRange(DeskServoError):
    """Query timestamp lies outside the recorded range."""


class UnreachableLocation(DeskServoError):
    """An image location does not unproject to a usable ground position."""


class MissingEndpointAnnotation(DeskServoError):
    """A spin session lacks its first or last frame annotation."""


class EmptyInput(DeskServoError):
    """Operation requires at least one element."""


class RobotLostTimeout(DeskServoError):
    """The detector has not seen the robot for too long."""


class InsufficientData(DeskServoError):
    """Not enough data to perform the requested split."""


class ShapeMismatch(DeskServoError):
    """Input dimensions do not match the model configuration."""


class DegenerateExpectation(DeskServoError):
    """Circular expectation undefined: resultant vector length is ~0."""


class EmptyDataset(DeskServoError):
    """Training or evaluation requires a non-empty split."""


class InvalidState(DeskServoError):
    """Controller state is inconsistent with the given track."""


class TooFewCorners(DeskServoError):
    """A track needs at least two corner boxes."""


class ModelLoadError(DeskServoError):
    """Checkpoint file is missing, corrupt, or incompatible."""


class EmptyRun(DeskServoError):
    """Metrics require a run record with at least one tick."""


class Timeout(DeskServoError):
    """An autonomy run did not finish within its time budget."""
