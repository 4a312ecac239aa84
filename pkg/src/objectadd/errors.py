"""Exception hierarchy shared across the package."""


class ObjectAddError(Exception):
    """Base class for all package errors."""


class ResolutionError(ObjectAddError):
    """Mask/grid resolution mismatch or impossible resample."""


class EmbeddingOverflowError(ObjectAddError):
    """Coalesced prompt does not fit the encoder window."""


class DegenerateAttentionError(ObjectAddError):
    """Attention row carries zero total mass."""


class GuidanceDivergedError(ObjectAddError):
    """Backward guidance produced a non-finite gradient."""

    def __init__(self, message, energy_history=None):
        super().__init__(message)
        self.energy_history = list(energy_history or [])


class TrajectoryAlignmentError(ObjectAddError):
    """Latents from different timesteps or shapes were combined."""


class ConfigError(ObjectAddError):
    """Invalid configuration value."""


class SegmentationError(ObjectAddError):
    """Object segmentation produced an empty foreground."""


class CapabilityError(ObjectAddError):
    """Backend does not support the requested operation."""


class TerminalStateError(ObjectAddError):
    """Denoise step requested past the end of the schedule."""


class ContractError(ObjectAddError):
    """Operation precondition violated by the caller."""


class CaseParseError(ObjectAddError):
    """Malformed benchmark case file."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class StageError(ObjectAddError):
    """Pipeline stage failure carrying the stage tag and partial traces."""

    def __init__(self, stage, message, traces=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.traces = traces or {}
