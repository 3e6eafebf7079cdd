"""Exception hierarchy shared by every subsystem.

``exit_code`` mirrors the CLI contract: 1 for input/validation problems,
2 for failures raised while computing.
"""


class E2xError(Exception):
    exit_code = 1


class ShapeMismatchError(E2xError):
    pass


class NonFiniteValueError(E2xError):
    pass


class LengthMismatchError(E2xError):
    pass


class InvalidValueError(E2xError):
    """Generic invariant violation (bad labels, bad parameter ranges, ...)."""


class InvalidReferenceError(E2xError):
    pass


class TooManySegmentsError(E2xError):
    pass


class TooManyFeaturesError(E2xError):
    pass


class WindowTooLargeError(E2xError):
    pass


class NoDetectionsError(E2xError):
    pass


class GradientUnavailableError(E2xError):
    """The model exposes no gradients; only perturbation methods apply."""

    exit_code = 2


class SingularSystemError(E2xError):
    """Unregularized regression system is rank deficient."""

    exit_code = 2
