class VShuffleError(Exception):
    """Root of every error raised by this package."""


class ShapeError(VShuffleError, ValueError):
    """Tensor shapes or indices violate an operation's precondition."""


class SpecError(VShuffleError, ValueError):
    """A shuffle/shift/sampler/network specification is inconsistent with its input."""


class FormatError(VShuffleError, ValueError):
    """A tensor dump or checkpoint file is malformed."""


class BenchError(VShuffleError, RuntimeError):
    """A benchmark could not be completed (e.g. allocation failure)."""
