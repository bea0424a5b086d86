"""Exception types shared across the library.

Every failure mode that callers are expected to handle has a dedicated
class so the CLI can map them to exit codes without string matching.
"""


class JointsplatError(Exception):
    """Base class for all library errors."""


class BehindCamera(JointsplatError):
    """Point is at or behind the camera plane (Z <= depth epsilon)."""


class DegenerateGeometry(JointsplatError):
    """Triangulation design matrix is rank-deficient (no parallax)."""


class MissingDetection(JointsplatError):
    """Detection absent or outside the margin-extended image."""


class EmptyMask(JointsplatError):
    """No (view, joint) pair contributes any masked pixel; nothing to optimize."""


class NonFiniteLoss(JointsplatError):
    """Loss or gradient became non-finite. Carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SceneFormatError(JointsplatError):
    """Scene or results file violates the schema; message names the field path."""
