"""Tabular construction schedules: typed rows, dependency links, ingestion.

A schedule arrives as character-separated text (comma or tab) with one row
per activity. Dependency cells use the grammar

    <id>[:<REL>[+<lag>|-<lag>]] [; <id>...]

where REL is one of FS, SS, FF, SF (default FS) and lag is a signed day
count (default 0). Dates are ISO ``YYYY-MM-DD``; WBS paths serialize with
``.`` between segments, so segments themselves must not contain dots.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date

RELATIONS = ("FS", "SS", "FF", "SF")

COL_ID = "Activity ID"
COL_NAME = "Activity Name"
COL_STATUS = "Activity Status"
COL_WBS = "WBS"
COL_DISCIPLINE = "Discipline"
COL_LEVEL = "Level"
COL_AREA = "Area"
COL_ZONE = "Zone"
COL_START = "Current Start"
COL_FINISH = "Current Finish"
COL_PRED = "Predecessor Details"
COL_SUCC = "Successor Details"

# Fixed column order of the canonical serialization; extras follow, sorted.
CANONICAL_COLUMNS = (
    COL_ID,
    COL_NAME,
    COL_STATUS,
    COL_WBS,
    COL_DISCIPLINE,
    COL_LEVEL,
    COL_AREA,
    COL_ZONE,
    COL_START,
    COL_FINISH,
    COL_PRED,
    COL_SUCC,
)

MANDATORY_COLUMNS = (
    COL_ID,
    COL_STATUS,
    COL_WBS,
    COL_DISCIPLINE,
    COL_LEVEL,
    COL_AREA,
    COL_START,
    COL_FINISH,
    COL_PRED,
    COL_SUCC,
)

CANONICAL_STATUSES = ("Not Started", "In Progress", "Completed")


class ScheduleError(Exception):
    """Base class for ingestion failures."""


class MissingColumnError(ScheduleError):
    def __init__(self, column: str):
        super().__init__(f"missing mandatory column: {column!r}")
        self.column = column


class MalformedDateError(ScheduleError):
    def __init__(self, row: int, cell: str, reason: str):
        super().__init__(f"row {row}: bad date cell {cell!r}: {reason}")
        self.row = row
        self.cell = cell


class MalformedDependencyError(ScheduleError):
    def __init__(self, row: int, cell: str, reason: str):
        super().__init__(f"row {row}: bad dependency cell {cell!r}: {reason}")
        self.row = row
        self.cell = cell


class DanglingReferenceError(ScheduleError):
    def __init__(self, row: int, ref: str):
        super().__init__(f"row {row}: dependency references unknown activity {ref!r}")
        self.row = row
        self.ref = ref


class DuplicateIdError(ScheduleError):
    def __init__(self, row: int, activity_id: str):
        super().__init__(f"row {row}: duplicate activity id {activity_id!r}")
        self.row = row
        self.activity_id = activity_id


@dataclass(frozen=True)
class Activity:
    activity_id: str
    name: str
    status: str
    wbs: tuple[str, ...]
    discipline: str
    level: str
    area: str
    zone: str | None
    current_start: date
    current_finish: date
    extra_attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DependencyLink:
    predecessor_id: str
    successor_id: str
    relation: str = "FS"
    lag_days: int = 0


@dataclass(frozen=True)
class Schedule:
    activities: tuple[Activity, ...]
    links: tuple[DependencyLink, ...]
    source_label: str = ""

    def by_id(self) -> dict[str, Activity]:
        return {a.activity_id: a for a in self.activities}


@dataclass(frozen=True)
class Violation:
    row: int
    field: str
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    def ok(self) -> bool:
        return not self.violations


_DEP_TOKEN = re.compile(
    r"^(?P<id>[^:;]+?)(?::(?P<rel>[A-Za-z]{2})(?P<lag>[+-]\d+)?)?$"
)


def parse_dependency_cell(cell: str, *, row: int) -> list[tuple[str, str, int]]:
    """Split one dependency cell into (id, relation, lag) triples."""
    out: list[tuple[str, str, int]] = []
    for raw_tok in cell.split(";"):
        tok = raw_tok.strip()
        if not tok:
            continue
        m = _DEP_TOKEN.match(tok)
        if not m:
            raise MalformedDependencyError(row, cell, f"unparseable token {tok!r}")
        ref = m.group("id").strip()
        if not ref:
            raise MalformedDependencyError(row, cell, "empty activity reference")
        rel = (m.group("rel") or "FS").upper()
        if rel not in RELATIONS:
            raise MalformedDependencyError(row, cell, f"unknown relation {rel!r}")
        lag = int(m.group("lag") or 0)
        out.append((ref, rel, lag))
    return out


def _parse_date(text: str, *, row: int) -> date:
    cell = text.strip()
    try:
        return date.fromisoformat(cell)
    except ValueError as exc:
        raise MalformedDateError(row, cell, str(exc)) from None


def _detect_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def parse_schedule(
    raw: str,
    format_spec: dict[str, str] | None = None,
    *,
    source_label: str = "",
) -> Schedule:
    """Parse character-separated tabular text into a Schedule.

    ``format_spec`` maps canonical column names to the header names used in
    the file; unmapped canonical names are looked up under their own name.
    Unknown columns land in ``extra_attributes``. Raises on the first
    structural defect (missing column, malformed date or dependency cell,
    duplicate id, dangling reference).
    """
    text = raw.lstrip("﻿")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MissingColumnError(COL_ID)
    delim = _detect_delimiter(lines[0])
    reader = csv.reader(io.StringIO("\n".join(lines)), delimiter=delim)
    rows = list(reader)
    header = [h.strip() for h in rows[0]]

    spec = dict(format_spec or {})
    actual_to_canonical: dict[str, str] = {}
    for canonical in CANONICAL_COLUMNS:
        actual_to_canonical[spec.get(canonical, canonical)] = canonical

    col_index: dict[str, int] = {}
    extra_headers: list[tuple[str, int]] = []
    for idx, name in enumerate(header):
        canonical = actual_to_canonical.get(name)
        if canonical is not None and canonical not in col_index:
            col_index[canonical] = idx
        else:
            extra_headers.append((name, idx))

    for col in MANDATORY_COLUMNS:
        if col not in col_index:
            raise MissingColumnError(spec.get(col, col))

    activities: list[Activity] = []
    seen_ids: set[str] = set()

    for row_no, cells in enumerate(rows[1:], start=2):
        def get(col: str) -> str:
            idx = col_index.get(col)
            if idx is None or idx >= len(cells):
                return ""
            return cells[idx].strip()

        activity_id = get(COL_ID)
        if not activity_id:
            raise ScheduleError(f"row {row_no}: empty activity id")
        if activity_id in seen_ids:
            raise DuplicateIdError(row_no, activity_id)
        seen_ids.add(activity_id)

        start = _parse_date(get(COL_START), row=row_no)
        finish = _parse_date(get(COL_FINISH), row=row_no)
        if start > finish:
            raise MalformedDateError(
                row_no,
                get(COL_FINISH),
                f"finish precedes start {start.isoformat()}",
            )

        wbs_cell = get(COL_WBS)
        wbs = tuple(seg for seg in wbs_cell.split(".") if seg != "")
        if not wbs:
            raise MalformedDependencyError(row_no, wbs_cell, "empty WBS path")

        extras = {
            name: (cells[idx].strip() if idx < len(cells) else "")
            for name, idx in extra_headers
        }
        activities.append(
            Activity(
                activity_id=activity_id,
                name=get(COL_NAME),
                status=get(COL_STATUS),
                wbs=wbs,
                discipline=get(COL_DISCIPLINE),
                level=get(COL_LEVEL),
                area=get(COL_AREA),
                zone=get(COL_ZONE) or None,
                current_start=start,
                current_finish=finish,
                extra_attributes=extras,
            )
        )

    # Second pass over dependency cells now that every id is known.
    links: list[DependencyLink] = []
    seen_triples: set[tuple[str, str, str]] = set()
    for row_no, cells in enumerate(rows[1:], start=2):
        def get(col: str) -> str:
            idx = col_index.get(col)
            if idx is None or idx >= len(cells):
                return ""
            return cells[idx].strip()

        activity_id = get(COL_ID)
        for ref, rel, lag in parse_dependency_cell(get(COL_PRED), row=row_no):
            _append_link(links, seen_triples, row_no, ref, activity_id, rel, lag, seen_ids)
        for ref, rel, lag in parse_dependency_cell(get(COL_SUCC), row=row_no):
            _append_link(links, seen_triples, row_no, activity_id, ref, rel, lag, seen_ids)

    return Schedule(
        activities=tuple(activities),
        links=tuple(links),
        source_label=source_label,
    )


def _append_link(
    links: list[DependencyLink],
    seen: set[tuple[str, str, str]],
    row_no: int,
    pred: str,
    succ: str,
    rel: str,
    lag: int,
    known_ids: set[str],
) -> None:
    if pred == succ:
        raise MalformedDependencyError(row_no, pred, "self-referencing dependency")
    for ref in (pred, succ):
        if ref not in known_ids:
            raise DanglingReferenceError(row_no, ref)
    triple = (pred, succ, rel)
    if triple in seen:
        # Both endpoints usually declare the same link; keep the first form.
        return
    seen.add(triple)
    links.append(DependencyLink(pred, succ, rel, lag))


def validate(schedule: Schedule) -> ValidationReport:
    """Check every type invariant; violations are data, not errors.

    Rows are 1-based positions within ``schedule.activities`` (links report
    the row of their first endpoint when it exists, else 0). The report is
    sorted by (row, field, kind, message) and is a pure function of the
    schedule.
    """
    found: list[Violation] = []
    row_of: dict[str, int] = {}
    seen: dict[str, int] = {}
    for row, act in enumerate(schedule.activities, start=1):
        row_of.setdefault(act.activity_id, row)
        if not act.activity_id:
            found.append(Violation(row, COL_ID, "EmptyId", "activity id is empty"))
        elif act.activity_id in seen:
            found.append(
                Violation(
                    row,
                    COL_ID,
                    "DuplicateId",
                    f"id {act.activity_id!r} first used at row {seen[act.activity_id]}",
                )
            )
        else:
            seen[act.activity_id] = row
        if act.current_start > act.current_finish:
            found.append(
                Violation(row, COL_FINISH, "DateOrder", "finish precedes start")
            )
        if len(act.wbs) < 1:
            found.append(Violation(row, COL_WBS, "EmptyWbs", "WBS path is empty"))
        if not act.discipline:
            found.append(
                Violation(row, COL_DISCIPLINE, "EmptyDiscipline", "discipline is empty")
            )

    ids = {a.activity_id for a in schedule.activities}
    triples: set[tuple[str, str, str]] = set()
    for link in schedule.links:
        row = row_of.get(link.predecessor_id) or row_of.get(link.successor_id) or 0
        if link.predecessor_id == link.successor_id:
            found.append(
                Violation(
                    row, "links", "SelfLoop", f"{link.predecessor_id!r} depends on itself"
                )
            )
        for ref in (link.predecessor_id, link.successor_id):
            if ref not in ids:
                found.append(
                    Violation(row, "links", "DanglingReference", f"unknown id {ref!r}")
                )
        triple = (link.predecessor_id, link.successor_id, link.relation)
        if triple in triples:
            found.append(
                Violation(
                    row,
                    "links",
                    "DuplicateLink",
                    f"duplicate {link.relation} link {link.predecessor_id!r} -> {link.successor_id!r}",
                )
            )
        triples.add(triple)

    ordered = tuple(
        sorted(found, key=lambda v: (v.row, v.field, v.kind, v.message))
    )
    return ValidationReport(ordered)


def duration_days(activity: Activity) -> int:
    """Inclusive-exclusive day count: finish minus start."""
    return (activity.current_finish - activity.current_start).days


def format_dependency(link: DependencyLink, *, endpoint: str) -> str:
    lag = link.lag_days
    suffix = "" if lag == 0 else f"{lag:+d}"
    return f"{endpoint}:{link.relation}{suffix}"


def canonical_row(schedule: Schedule, activity: Activity) -> dict[str, str]:
    """Map canonical (plus extra) column names to serialized cell strings."""
    preds = sorted(
        (l for l in schedule.links if l.successor_id == activity.activity_id),
        key=lambda l: (l.predecessor_id, l.relation),
    )
    succs = sorted(
        (l for l in schedule.links if l.predecessor_id == activity.activity_id),
        key=lambda l: (l.successor_id, l.relation),
    )
    row = {
        COL_ID: activity.activity_id,
        COL_NAME: activity.name,
        COL_STATUS: activity.status,
        COL_WBS: ".".join(activity.wbs),
        COL_DISCIPLINE: activity.discipline,
        COL_LEVEL: activity.level,
        COL_AREA: activity.area,
        COL_ZONE: activity.zone or "",
        COL_START: activity.current_start.isoformat(),
        COL_FINISH: activity.current_finish.isoformat(),
        COL_PRED: ";".join(format_dependency(l, endpoint=l.predecessor_id) for l in preds),
        COL_SUCC: ";".join(format_dependency(l, endpoint=l.successor_id) for l in succs),
    }
    for key in sorted(activity.extra_attributes):
        row[key] = activity.extra_attributes[key]
    return row


def extra_columns(schedule: Schedule) -> list[str]:
    cols: set[str] = set()
    for act in schedule.activities:
        cols.update(act.extra_attributes)
    return sorted(cols)


def serialize_schedule(schedule: Schedule) -> str:
    """Canonical comma-separated serialization with a fixed column order."""
    extras = extra_columns(schedule)
    header = list(CANONICAL_COLUMNS) + extras
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for act in schedule.activities:
        row = canonical_row(schedule, act)
        writer.writerow([row.get(col, "") for col in header])
    return buf.getvalue()


def serialize_records(schedule: Schedule) -> str:
    """Line-delimited export: one JSON object per activity."""
    preds: dict[str, list[DependencyLink]] = {}
    succs: dict[str, list[DependencyLink]] = {}
    for link in schedule.links:
        preds.setdefault(link.successor_id, []).append(link)
        succs.setdefault(link.predecessor_id, []).append(link)
    lines = []
    for act in schedule.activities:
        rec = {
            "activity_id": act.activity_id,
            "name": act.name,
            "status": act.status,
            "wbs": list(act.wbs),
            "discipline": act.discipline,
            "level": act.level,
            "area": act.area,
            "zone": act.zone,
            "current_start": act.current_start.isoformat(),
            "current_finish": act.current_finish.isoformat(),
            "duration_days": duration_days(act),
            "predecessors": [
                {"id": l.predecessor_id, "relation": l.relation, "lag_days": l.lag_days}
                for l in sorted(
                    preds.get(act.activity_id, ()),
                    key=lambda l: (l.predecessor_id, l.relation),
                )
            ],
            "successors": [
                {"id": l.successor_id, "relation": l.relation, "lag_days": l.lag_days}
                for l in sorted(
                    succs.get(act.activity_id, ()),
                    key=lambda l: (l.successor_id, l.relation),
                )
            ],
            "extra_attributes": dict(sorted(act.extra_attributes.items())),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")
