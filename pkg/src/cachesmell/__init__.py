"""Static detection of cache-related smells in GitLab CI workflows."""

from .analysis import Analysis, analyze_document, analyze_file, analyze_text
from .detectors import SMELLS, Finding, Notice, RepoContext

__version__ = "0.1.0"

__all__ = [
    "Analysis",
    "Finding",
    "Notice",
    "RepoContext",
    "SMELLS",
    "analyze_document",
    "analyze_file",
    "analyze_text",
]
