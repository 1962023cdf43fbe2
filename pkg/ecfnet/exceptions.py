from __future__ import annotations

__all__ = [
    "BadMagic",
    "CheckpointError",
    "ChecksumMismatch",
    "DegradationError",
    "ECFNetError",
    "ImageFormatError",
    "InvalidConfig",
    "MalformedHeader",
    "NonFiniteInput",
    "ParameterShapeMismatch",
    "ShapeError",
    "TapeError",
    "TrainingDiverged",
    "TruncatedPayload",
    "UnsupportedVersion",
]


class ECFNetError(Exception):
    """Base class for every error raised by the package"""


class ShapeError(ECFNetError, ValueError):
    """
    Raised when tensor shapes disagree.

    ``axis`` names the offending axis (``"channel"``, ``"height"`` ...) when known.
    """

    def __init__(self, *args, **kwargs):
        self.axis = kwargs.pop("axis", None)
        super().__init__(*args, **kwargs)


class NonFiniteInput(ECFNetError, ValueError):  # noqa: N818
    """Raised when an op that requires finite input receives NaN"""


class TapeError(ECFNetError):
    """Raised on misuse of the autodiff tape (double backward, non-scalar loss)"""


class InvalidConfig(ECFNetError, ValueError):  # noqa: N818
    """
    Raised when a configuration violates one or more constraints.

    ``violations`` lists every violated constraint, not only the first one.
    """

    def __init__(self, *args, **kwargs):
        self.violations = list(kwargs.pop("violations", []))
        if not args and self.violations:
            args = ("; ".join(self.violations),)
        super().__init__(*args, **kwargs)


class CheckpointError(ECFNetError, ValueError):
    """Raised when a checkpoint file cannot be read back"""


class ChecksumMismatch(CheckpointError):  # noqa: N818
    """Raised when the stored CRC-32 does not match the payload (corrupt or truncated file)"""


class BadMagic(CheckpointError):  # noqa: N818
    """Raised when the file does not start with the ECFN magic"""


class UnsupportedVersion(CheckpointError):  # noqa: N818
    """Raised when the checkpoint format version is unknown"""


class ParameterShapeMismatch(CheckpointError):  # noqa: N818
    """Raised when a stored parameter disagrees with the model it is loaded into"""

    def __init__(self, *args, **kwargs):
        self.parameter = kwargs.pop("parameter", None)
        super().__init__(*args, **kwargs)


class ImageFormatError(ECFNetError, ValueError):
    """Raised when an image file cannot be decoded"""


class MalformedHeader(ImageFormatError):  # noqa: N818
    """Raised when a PPM header is not a binary P6 header with maxval 255"""


class TruncatedPayload(ImageFormatError):  # noqa: N818
    """Raised when a PPM file ends before all pixels were read"""


class DegradationError(ECFNetError, ValueError):
    """Raised when a degradation spec has parameters outside their ranges"""


class TrainingDiverged(ECFNetError):  # noqa: N818
    """
    Raised when the loss or a gradient becomes NaN.

    ``parameter`` holds the name of the first parameter whose gradient is NaN,
    ``output`` the first output head whose values are not finite.
    """

    def __init__(self, *args, **kwargs):
        self.step = kwargs.pop("step", None)
        self.parameter = kwargs.pop("parameter", None)
        self.output = kwargs.pop("output", None)
        super().__init__(*args, **kwargs)
