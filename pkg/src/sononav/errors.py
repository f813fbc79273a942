"""Exception hierarchy shared across the workbench."""


class SononavError(Exception):
    """Base class for all workbench errors."""


class InvalidTransformError(SononavError):
    """A rigid transform violates its invariants (e.g. non-unit quaternion)."""


class InvalidInputError(SononavError):
    """An input value is outside the operation's domain."""


class InsufficientDataError(SononavError):
    """Not enough samples/pairs to produce a meaningful result."""


class DegenerateMotionError(SononavError):
    """Calibration motions do not constrain the solution (parallel axes)."""


class ConfigError(SononavError):
    """A configuration document is inconsistent or incomplete."""


class EmptyVoiError(SononavError):
    """The volume of interest selects no voxels in any frame."""


class CodecError(SononavError):
    """Base class for wire-format errors."""


class ProtocolError(CodecError):
    """Bad magic bytes: the data is not a session stream."""


class UnsupportedVersionError(CodecError):
    """Valid magic but a protocol version this build does not speak."""


class FramingError(CodecError):
    """Truncated or self-inconsistent message framing/payload."""


class MessageSizeError(CodecError):
    """Payload exceeds the protocol's hard size limit."""
