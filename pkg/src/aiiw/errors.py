"""Exception types shared across the package."""
from __future__ import annotations


class AiiwError(Exception):
    """Base class for package errors."""


class DataError(AiiwError):
    """Malformed input data (bad record, parse failure).

    Carries enough context to locate the offender: subject id and, for file
    input, the 1-based line number.
    """

    def __init__(self, message: str, *, subject_id: str | None = None,
                 line: int | None = None):
        parts = [message]
        if subject_id is not None:
            parts.append(f"subject_id={subject_id!r}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__("; ".join(parts))
        self.subject_id = subject_id
        self.line = line


class ConfigError(AiiwError):
    """Invalid or inconsistent run configuration."""


class NumericError(AiiwError):
    """An iterative fit failed to converge.

    ``trace`` holds one dict per iteration (objective, gradient norm, step
    halvings) so a failed fit can be diagnosed from the error alone.
    """

    def __init__(self, message: str, trace: list[dict] | None = None):
        super().__init__(message)
        self.trace = trace or []


class MonotoneLikelihoodError(NumericError):
    """Partial-likelihood maximizer diverged (monotone likelihood)."""


class TiltOverflowError(NumericError):
    """Tilted moment sum cannot meet its tail bound in working precision."""

    def __init__(self, alpha: float, mu: float):
        super().__init__(
            f"tilted moment diverges or exceeds working precision at "
            f"alpha={alpha:g}, mu={mu:g} (need mu*(e^alpha - 1) < r)")
        self.alpha = alpha
        self.mu = mu


class EnvelopeViolationError(AiiwError):
    """Thinning acceptance probability exceeded one (bad envelope)."""


class InferenceError(AiiwError):
    """Too many work items (bootstrap resamples, study reps) failed."""

    def __init__(self, message: str, *, n_failed: int, n_total: int):
        super().__init__(f"{message} ({n_failed}/{n_total} failed)")
        self.n_failed = n_failed
        self.n_total = n_total
