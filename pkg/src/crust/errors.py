"""Exception types shared across the pipeline."""

from __future__ import annotations


class CrustError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CrustError):
    """Bad configuration: unknown keys, missing files, inconsistent settings."""


class LlmApiError(CrustError):
    """Chat backend failure: auth, content filter, exhausted retries."""

    def __init__(self, message: str, *, content_filtered: bool = False):
        super().__init__(message)
        self.content_filtered = content_filtered


class FuzzingSetupError(CrustError):
    """Differential fuzzing could not be set up (harness generation or build failed)."""


class FuzzingExceptionError(CrustError):
    """The fuzzer process failed in a way unrelated to the comparison itself."""


class CoverageGapError(CrustError):
    """An evaluation requires ledger cells that are missing."""

    def __init__(self, message: str, gaps: list[tuple] | None = None):
        super().__init__(message)
        self.gaps = gaps or []
