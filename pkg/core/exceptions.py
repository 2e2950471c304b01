"""
Error hierarchy for the anomaly detection engine
"""

from config.config import EXIT_DATA, EXIT_DEGENERATE, EXIT_USAGE


class AnomalyEngineError(Exception):
    """Base class; ``exit_code`` is what the CLI exits with"""

    exit_code = EXIT_DATA


class InvalidInputError(AnomalyEngineError, ValueError):
    """Malformed arguments: shape/dimension mismatch, non-finite values"""


class UsageError(AnomalyEngineError):
    """Bad invocation: missing paths, conflicting flags"""

    exit_code = EXIT_USAGE


class InsufficientHistoryError(AnomalyEngineError, ValueError):
    """Series too short for the requested order or forecast"""


class InvalidModelError(AnomalyEngineError, ValueError):
    """Model violates its invariants (e.g. non-positive noise variance)"""


class NotActiveError(AnomalyEngineError, ValueError):
    """Feature requested for a block without foreground pixels"""


class FormatError(AnomalyEngineError):
    """Unparseable file; carries the byte offset or line number when known"""

    def __init__(self, message, offset=None, line=None):
        location = ''
        if offset is not None:
            location = f" (byte offset {offset})"
        elif line is not None:
            location = f" (line {line})"
        super().__init__(f"{message}{location}")
        self.offset = offset
        self.line = line


class DegenerateCalibrationError(AnomalyEngineError):
    """Calibration frames carry no usable motion"""

    exit_code = EXIT_DEGENERATE


class UndefinedMetricError(AnomalyEngineError, ValueError):
    """Metric undefined for the given labels (e.g. single-class ground truth)"""


class ScenarioError(AnomalyEngineError, ValueError):
    """Synthetic scenario cannot be rendered as specified"""
