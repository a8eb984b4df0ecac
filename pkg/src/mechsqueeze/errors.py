"""
Exception hierarchy and warning categories for mechsqueeze
"""

from typing import Any, Dict, Optional


class MechSqueezeError(Exception):
    """Base class for every error raised by mechsqueeze"""


class ConfigError(MechSqueezeError, ValueError):
    """Invalid configuration or parameter file"""


class ParameterError(ConfigError):
    """A parameter violates one of its invariants"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataFileError(MechSqueezeError, OSError):
    """Missing, unreadable or corrupt data file"""


class NumericalError(MechSqueezeError, ArithmeticError):
    """A numerical operation cannot be carried out"""


class DomainError(NumericalError):
    """Argument outside the domain of a closed-form expression"""


class StepSizeError(NumericalError):
    """Sampling step too coarse for the dynamics"""


class SingularityError(NumericalError):
    """Singular system (e.g. undamped drift in a Lyapunov solve)"""


class PoleError(NumericalError):
    """Degenerate pole in a filter coefficient"""


class ConvergenceError(NumericalError):
    """Iterative solver did not converge"""


class DetectabilityError(NumericalError):
    """Measurement carries no information about the mechanical state"""


class GridMismatchError(NumericalError):
    """Frequency grid does not match the data grid"""


class BandError(NumericalError):
    """Frequency band outside the valid range"""


class LengthError(NumericalError):
    """Series length incompatible with the requested operation"""


class NoCrossingsError(NumericalError):
    """Too few zero crossings to estimate a frequency"""


class DegenerateBinningError(NumericalError):
    """Binning variable has zero range"""


class ManifestError(MechSqueezeError):
    """Run manifest missing, incomplete or inconsistent with files on disk"""


class StageError(MechSqueezeError):
    """A pipeline stage failed; carries the stage name and partial manifest"""

    def __init__(self, stage: str, cause: BaseException,
                 partial_manifest: Optional[Dict[str, Any]] = None):
        self.stage = stage
        self.cause = cause
        self.partial_manifest = partial_manifest or {}
        super().__init__(f"stage '{stage}' failed: {cause}")


class RegimeWarning(UserWarning):
    """Parameters outside the bad-cavity / small-detuning regime"""


class RankDeficiencyWarning(UserWarning):
    """Fit parameters are not separately identifiable"""


class BelowVacuumWarning(UserWarning):
    """Conditional state below the Heisenberg bound"""
