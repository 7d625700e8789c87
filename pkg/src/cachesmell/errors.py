"""Exception hierarchy for the analyzer."""

from __future__ import annotations


class AnalysisError(Exception):
    """Base class for every error the analyzer raises on bad input."""


# frontend
class MalformedYaml(AnalysisError):
    pass


class IncludeCycle(AnalysisError):
    pass


class NotAMapping(AnalysisError):
    pass


# resolver
class UnknownExtendsTarget(AnalysisError):
    pass


class ExtendsDepthExceeded(AnalysisError):
    pass


class UnknownStage(AnalysisError):
    pass


class NeedsUnknownJob(AnalysisError):
    pass


# graph
class CyclicNeeds(AnalysisError):
    pass


# reporting / metrics
class ZeroJobs(AnalysisError):
    pass


class EmptyCorpus(AnalysisError):
    pass


class MissingPrediction(AnalysisError):
    pass


class MalformedLabels(AnalysisError):
    pass


# remote ingestion
class FetchError(AnalysisError):
    pass


class HttpError(FetchError):
    def __init__(self, status: int, url: str, message: str = ""):
        super().__init__(f"HTTP {status} for {url}" + (f": {message}" if message else ""))
        self.status = status
        self.url = url


class NoCiFile(FetchError):
    pass


class RateLimited(FetchError):
    def __init__(self, url: str, retry_after: float | None, attempts: int):
        super().__init__(
            f"rate limited on {url} after {attempts} attempt(s)"
            + (f", retry after {retry_after:g}s" if retry_after is not None else "")
        )
        self.url = url
        self.retry_after = retry_after
        self.attempts = attempts
