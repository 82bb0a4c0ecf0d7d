"""CSV/JSON interchange: dataset ingest and deterministic output writers.

Data files are long format, one row per assessment, header
``subject_id,arm,time_days,outcome``; the ``time_days = 0`` row is the
baseline and must come first within its subject.  Lines starting with ``#``
are comments, so exported files (which carry a provenance header) re-ingest
cleanly.  All writers format floats with ``repr`` (shortest round-trip), use
``\n`` line endings, and iterate in deterministic order, which is what makes
byte-identical reruns possible.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .errors import DataError
from .records import ARMS, SubjectRecord

DATA_HEADER = ["subject_id", "arm", "time_days", "outcome"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def provenance_line(config_sha256: str, seed: int) -> str:
    return f"# config_sha256={config_sha256} seed={seed}"


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def ingest(path) -> dict[str, list[SubjectRecord]]:
    """Parse a long-format assessment CSV into per-arm subject records.

    Subjects keep first-appearance order; within a subject, rows must be in
    strictly increasing time order starting at the baseline.  Errors carry
    the 1-based line number of the offending row.
    """
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            rows.append((lineno, next(csv.reader([line]))))
    if not rows:
        raise DataError(f"no data rows in {path}")

    head_no, head = rows[0]
    if [h.strip() for h in head] != DATA_HEADER:
        raise DataError(f"expected header {','.join(DATA_HEADER)}",
                        line=head_no)

    order: list[str] = []
    acc: dict[str, dict] = {}
    for lineno, fields in rows[1:]:
        if len(fields) != 4:
            raise DataError(f"expected 4 fields, got {len(fields)}",
                            line=lineno)
        sid, arm, t_raw, y_raw = (f.strip() for f in fields)
        if not sid:
            raise DataError("empty subject_id", line=lineno)
        if arm not in ARMS:
            raise DataError(f"unknown arm {arm!r}; expected one of {ARMS}",
                            subject_id=sid, line=lineno)
        try:
            t, y = float(t_raw), float(y_raw)
        except ValueError:
            raise DataError(f"non-numeric field in "
                            f"({t_raw!r}, {y_raw!r})",
                            subject_id=sid, line=lineno) from None
        if not (math.isfinite(t) and math.isfinite(y)) or t < 0:
            raise DataError(f"time_days/outcome out of range "
                            f"({t!r}, {y!r})", subject_id=sid, line=lineno)

        entry = acc.get(sid)
        if entry is None:
            entry = {"arm": arm, "first_line": lineno, "baseline": None,
                     "times": [], "outcomes": [], "last_t": -1.0}
            acc[sid] = entry
            order.append(sid)
        elif entry["arm"] != arm:
            raise DataError(f"subject listed under two arms "
                            f"({entry['arm']!r}, {arm!r})",
                            subject_id=sid, line=lineno)

        if t == entry["last_t"]:
            raise DataError(f"duplicate time_days={t!r} for subject",
                            subject_id=sid, line=lineno)
        if t < entry["last_t"]:
            raise DataError(f"non-monotone time_days={t!r} after "
                            f"{entry['last_t']!r}", subject_id=sid,
                            line=lineno)
        if t == 0.0:
            entry["baseline"] = y
        else:
            if entry["baseline"] is None:
                raise DataError("assessment row before the time-0 baseline",
                                subject_id=sid, line=lineno)
            entry["times"].append(t)
            entry["outcomes"].append(y)
        entry["last_t"] = t

    by_arm: dict[str, list[SubjectRecord]] = {}
    for sid in order:
        entry = acc[sid]
        if entry["baseline"] is None:
            raise DataError("subject has no time-0 baseline row",
                            subject_id=sid, line=entry["first_line"])
        rec = SubjectRecord(sid, entry["arm"], entry["baseline"],
                            tuple(entry["times"]), tuple(entry["outcomes"]))
        by_arm.setdefault(entry["arm"], []).append(rec)
    return by_arm


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def export_subjects(path, by_arm: dict[str, list[SubjectRecord]],
                    comment: str | None = None) -> None:
    """Inverse of ingest: arms in canonical order, subjects in list order."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(comment + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATA_HEADER)
        for arm in ARMS:
            for rec in by_arm.get(arm, ()):
                writer.writerow([rec.subject_id, rec.arm, _fmt(0.0),
                                 _fmt(rec.baseline_outcome)])
                for t, y in zip(rec.times, rec.outcomes):
                    writer.writerow([rec.subject_id, rec.arm, _fmt(float(t)),
                                     _fmt(float(y))])


def write_csv(path, header: list[str], rows: list[list],
              comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(comment + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, obj: dict, config_sha256: str, seed: int) -> None:
    """JSON cannot carry comments, so provenance is embedded as fields."""
    payload = {"config_sha256": config_sha256, "seed": seed, **obj}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True)
                          + "\n")
