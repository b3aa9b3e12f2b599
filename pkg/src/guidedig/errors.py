"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class GuidedIGError(Exception):
    """Base class for all library errors."""


class InputError(GuidedIGError, ValueError):
    """Feature vector has the wrong shape or non-finite entries."""


class ModelSpecError(GuidedIGError):
    """Base class for model-spec loading failures."""


class ModelSpecParseError(ModelSpecError):
    pass


class DimensionMismatchError(ModelSpecError):
    pass


class UnknownActivationError(ModelSpecError):
    pass


class ProgressError(GuidedIGError, RuntimeError):
    """A Guided IG inner loop failed to reduce the remaining L1 distance."""


class NumericalError(GuidedIGError, ArithmeticError):
    """A non-finite value appeared during a computation."""


class DegenerateMaskError(GuidedIGError, ValueError):
    """Ground-truth mask has no positives or no negatives."""


class ImageFormatError(GuidedIGError):
    """Base class for Netpbm decoding failures."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass
