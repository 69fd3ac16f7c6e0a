"""Exception hierarchy and CLI exit codes."""

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COARSE = 3
EXIT_DIVERGED = 4
EXIT_FORMAT = 5


class HoiPoseError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputValidationError(HoiPoseError):
    exit_code = EXIT_INPUT


class BehindCameraError(InputValidationError):
    pass


class NonWatertightMeshError(InputValidationError):
    pass


class CoarseStageError(HoiPoseError):
    """Coarse pose estimation failed (too few inliers, degenerate matches).

    Carries the selected-viewpoint pose so callers may fall back to it.
    """

    exit_code = EXIT_COARSE

    def __init__(self, message, fallback_pose=None, diagnostics=None):
        super().__init__(message)
        self.fallback_pose = fallback_pose
        self.diagnostics = diagnostics or {}


class DivergenceError(HoiPoseError):
    exit_code = EXIT_DIVERGED


class FormatError(HoiPoseError):
    exit_code = EXIT_FORMAT
