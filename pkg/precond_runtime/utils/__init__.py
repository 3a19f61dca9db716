"""
Utilities package for the Shadow Preconditioner Runtime.

This package contains utility modules for validation, run file handling
and summary generation.
"""

from .validators import ConfigValidator, ValidationError, TraceIntegrityValidator
from .run_files import RunFileHandler
from .summary_generator import SummaryGenerator

__all__ = [
    'ConfigValidator',
    'ValidationError',
    'TraceIntegrityValidator',
    'RunFileHandler',
    'SummaryGenerator'
]
