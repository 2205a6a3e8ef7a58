"""Biased random walks among random traps and on subcritical trees conditioned to survive."""

from .models import ExperimentConfig, SuiteResult
from .offspring import OffspringLaw
from .pipeline import SuiteSizes, VerificationPipeline
from .reporting import PACKAGE_VERSION

__version__ = PACKAGE_VERSION

__all__ = ["ExperimentConfig", "OffspringLaw", "SuiteResult", "SuiteSizes", "VerificationPipeline", "__version__"]
