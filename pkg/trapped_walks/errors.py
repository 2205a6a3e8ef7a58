from __future__ import annotations

from typing import List, Optional


class LabError(RuntimeError):
    """Base class for every failure raised by the lab."""


class InvalidLawError(LabError, ValueError):
    """Raised for malformed, non-normalized or non-subcritical offspring laws."""


class DegenerateLawError(LabError, ValueError):
    """Raised when a closed form needs a nonzero offspring variance."""


class DomainError(LabError, ValueError):
    """Raised when a closed form is evaluated outside its stated parameter range."""


class CapExceededError(LabError):
    """Raised when a sampled tree outgrows its vertex cap."""

    def __init__(self, partial_size: int, size_cap: int):
        super().__init__(f"Tree exceeded size cap {size_cap} (partial size {partial_size}).")
        self.partial_size = partial_size
        self.size_cap = size_cap


class DegenerateTreeError(LabError):
    """Raised when a tree cannot support the requested walk quantity."""


class SingularSystemError(LabError):
    """Raised when a first-step linear system is singular or fails its residual check."""


class WindowError(LabError):
    """Raised when an environment or Kesten window cannot provide a requested site."""


class TooFewBlocksError(LabError):
    """Raised when a regeneration-based estimator gets too few blocks."""


class TooSmallSampleError(LabError):
    """Raised when a goodness-of-fit test gets fewer points than its asymptotics need."""


class ConfigError(LabError):
    """Raised when an experiment configuration is unreadable or invalid."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        detail = "; ".join(self.diagnostics)
        super().__init__(f"{message}: {detail}" if detail else message)
