from enum import Enum
from typing import Optional


class QrngError(Exception):
    """Base error; every subclass knows the CLI exit code it maps to"""
    exit_code: int = 1


class InvalidModel(QrngError, ValueError):
    """A state, measurement or budget violates its invariants"""
    exit_code = 2


class ConfigError(QrngError, ValueError):
    """Broken or unknown configuration keys"""
    exit_code = 2


class InvalidLength(QrngError, ValueError):
    """Bit buffer / Toeplitz dimension mismatch"""
    exit_code = 2


class InsufficientData(QrngError, ValueError):
    """Too few bits for a statistical test"""
    exit_code = 2


class PrerequisiteFailed(InsufficientData):
    """Statistical test prerequisite not met (e.g. runs test after monobit)"""


class AbortReason(str, Enum):
    EXPECTATION_ORDER = "expectation_order"
    NON_POSITIVE_WITNESS = "non_positive_witness"
    NO_TEST_DATA = "no_test_data"
    NON_POSITIVE_LENGTH = "non_positive_length"


class ProtocolAbort(QrngError):
    """Protocol check failed, the rounds are aborted"""
    exit_code = 3

    def __init__(self, reason: AbortReason, detail: Optional[str] = None):
        self.reason = reason
        self.detail = detail
        message = reason.value if not detail else f"{reason.value}: {detail}"
        super().__init__(message)


class AbortedRun(ProtocolAbort):
    """Downstream stage refused to run on an aborted report"""


class BoundViolation(QrngError):
    """Numeric adversary beat an analytic bound"""
    exit_code = 4


class ArtifactIOError(QrngError, OSError):
    """Reading or writing an artifact failed"""
    exit_code = 5
