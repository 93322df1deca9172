"""Exception types shared across the package.

Each exception corresponds to a documented failure mode of one or more
operations; callers are expected to catch the specific type, never to
parse messages.
"""


class ShapeMismatch(ValueError):
    """Operand shapes are not broadcastable or do not conform."""


class DomainError(ValueError):
    """Input outside an operation's mathematical domain (e.g. log of a negative)."""


class TapeMismatch(ValueError):
    """Operands are recorded on two different gradient tapes."""


class NotScalar(ValueError):
    """backward() was asked to differentiate a non-scalar value."""


class DetachedTensor(ValueError):
    """A tensor that is not on the tape was used where a recorded one is required."""


class SingularMatrix(ArithmeticError):
    """Pivot underflow during Gaussian elimination, even after regularization."""


class TooShort(ValueError):
    """Signal shorter than one analysis window and center padding is disabled."""


class NonFiniteInput(ValueError):
    """NaN or infinity in data that must be finite."""


class InvalidConfig(ValueError):
    """An STFT or run configuration violates its invariants."""


class ZeroMaskColumn(ValueError):
    """A frequency bin's mask weights sum to (numerically) zero."""


class NegativePsd(ValueError):
    """A power spectral density contains negative entries."""


class ConfigMismatch(ValueError):
    """Two spectrograms with different STFT configs or lengths were combined."""


class NonHermitianPsi(ValueError):
    """Posterior covariance handed to an objective is not Hermitian."""


class CountMismatch(ValueError):
    """Wrong number of elements (e.g. diffuse noise needs one source per azimuth)."""


class ZeroEnergy(ValueError):
    """A signal with zero energy where a nonzero one is required."""


class ZeroReference(ValueError):
    """Metric reference signal is identically zero."""


class NoVoicedFrames(ValueError):
    """Every analysis frame was classified as silent."""


class SingularNoiseScm(ArithmeticError):
    """Noise spatial covariance not invertible even after regularization."""


class EigenFailure(ArithmeticError):
    """Power iteration failed to converge to a principal eigenvector."""


class NonFiniteLoss(ArithmeticError):
    """Training loss became NaN or infinite; message names the first bad op."""


class RateMismatch(ValueError):
    """Audio sample rate differs from the configured rate."""


class MissingManifest(FileNotFoundError):
    """Oracle enhancement needs a scene manifest / clean references that are absent."""


class LengthMismatch(ValueError):
    """Aligned file lists or signals have different lengths."""
