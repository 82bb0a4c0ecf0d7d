"""Subject-level data records and observed-history features.

A subject is a baseline outcome plus an ordered sequence of post-baseline
assessments ``(time, outcome)``.  Everything the intensity and outcome models
condition on at time t is a deterministic function of the assessments strictly
before t; ``features_at`` materializes that function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DataError

ARMS = ("control", "intervention")


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observed data.

    Parameters
    ----------
    subject_id : str
        Unique identifier.
    arm : str
        One of ``ARMS``.
    baseline_outcome : float
        Outcome measured at time 0.
    times : tuple of float
        Post-baseline assessment times (days), strictly increasing, > 0.
    outcomes : tuple of float
        Outcome at each assessment time; same length as ``times``.
    """

    subject_id: str
    arm: str
    baseline_outcome: float
    times: tuple[float, ...] = field(default=())
    outcomes: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.arm not in ARMS:
            raise DataError(f"unknown arm {self.arm!r}", subject_id=self.subject_id)
        if len(self.times) != len(self.outcomes):
            raise DataError("times and outcomes differ in length",
                            subject_id=self.subject_id)
        vals = (self.baseline_outcome,) + self.outcomes
        for v in vals:
            if not math.isfinite(v) or v < 0:
                raise DataError(f"outcome {v!r} not a finite nonnegative number",
                                subject_id=self.subject_id)
        prev = 0.0
        for t in self.times:
            if not math.isfinite(t) or t <= prev:
                raise DataError(
                    f"assessment times must be finite and strictly increasing "
                    f"from 0, got {t!r} after {prev!r}", subject_id=self.subject_id)
            prev = t

    @property
    def n_assessments(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class ObservedPastFeatures:
    """History summary used by both nuisance models at a time t.

    ``stratum_k`` is the count of assessments strictly before t, so the
    subject is at risk for assessment number ``stratum_k + 1``.
    ``prev_time``/``prev_outcome`` refer to the most recent assessment
    strictly before t (baseline when there is none).
    """

    stratum_k: int
    prev_time: float
    prev_outcome: float


def features_at(record: SubjectRecord, t: float) -> ObservedPastFeatures:
    """Features of ``record``'s history strictly before time ``t``."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    k = 0
    while k < len(record.times) and record.times[k] < t:
        k += 1
    if k == 0:
        return ObservedPastFeatures(0, 0.0, record.baseline_outcome)
    return ObservedPastFeatures(k, record.times[k - 1], record.outcomes[k - 1])
