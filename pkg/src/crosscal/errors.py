"""Exceptions shared across the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all pipeline errors."""


class FrameRejected(CalibrationError):
    """A single data frame could not produce the four reference points.

    Frames are disposable: rejection consumes accumulation budget but is
    not fatal. ``reason`` is one of ``no_plane``, ``circles``,
    ``consistency`` (range pipeline) or ``no_markers`` (monocular).
    """

    def __init__(self, reason, detail=""):
        self.reason = reason
        msg = reason if not detail else f"{reason}: {detail}"
        super().__init__(msg)


class PoseRejected(CalibrationError):
    """A whole target pose yielded unusable data (``clusters`` or
    ``no_detections``)."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        msg = reason if not detail else f"{reason}: {detail}"
        super().__init__(msg)
