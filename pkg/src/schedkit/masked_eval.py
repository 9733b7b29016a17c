"""Masked-cell evaluation over schedules: tasks, scoring, preference pairs.

Ground-truth cells are hidden per task kind (three random columns, the
four relational columns, or the two date columns), prompts are built from
the masked row plus retrieved knowledge and context, and completions are
scored cell-wise with top-k candidate credit. Evaluated runs also yield
chosen/rejected preference pairs for alignment training.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from . import rng as prng
from .gateway import (
    Gateway,
    GatewayError,
    MISSING_COLUMNS_LABEL,
    wire_values,
)
from .knowledge import count_tokens
from .prompt_forge import AP, DA, MVP, build_task_prompt
from .schedule import (
    COL_AREA,
    COL_DISCIPLINE,
    COL_FINISH,
    COL_ID,
    COL_LEVEL,
    COL_NAME,
    COL_START,
    COL_STATUS,
    Schedule,
    canonical_row,
    extra_columns,
)

MASK_SENTINEL = "[MASKED]"
RELATIONAL_COLUMNS = (COL_STATUS, COL_LEVEL, COL_AREA, COL_DISCIPLINE)
DATE_COLUMNS = (COL_START, COL_FINISH)
GROUP_DIMENSIONS = ("discipline", "level", "area")

_VALUE_RE = re.compile(r"\[Value\](.*?)\[/Value\]", re.DOTALL)


class EvalError(Exception):
    pass


class TooFewColumnsError(EvalError):
    pass


class CorruptRecordError(EvalError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class GatewayEvalError(EvalError):
    """Raised when a run lost instances to gateway failures."""

    def __init__(self, partial_report: "ScoreReport", failures: int):
        super().__init__(f"{failures} instance(s) failed at the gateway")
        self.partial_report = partial_report


@dataclass(frozen=True)
class MaskSpec:
    row_id: str
    task_kind: str
    masked_columns: tuple[str, ...]
    ground_truth: dict[str, str]


@dataclass(frozen=True)
class Completion:
    raw_text: str
    parsed_cells: tuple[tuple[str, ...], ...]
    parse_ok: bool


@dataclass
class EvalInstance:
    mask: MaskSpec
    prompt_system: str
    prompt_user: str
    response_text: str | None
    parse_ok: bool
    cells_correct: tuple[bool, ...]
    error: str | None = None

    @property
    def all_correct(self) -> bool:
        return (
            self.error is None
            and self.parse_ok
            and bool(self.cells_correct)
            and all(self.cells_correct)
        )

    def to_dict(self) -> dict:
        return {
            "row_id": self.mask.row_id,
            "task_kind": self.mask.task_kind,
            "masked_columns": list(self.mask.masked_columns),
            "ground_truth": dict(self.mask.ground_truth),
            "prompt_system": self.prompt_system,
            "prompt_user": self.prompt_user,
            "response_text": self.response_text,
            "parse_ok": self.parse_ok,
            "cells_correct": list(self.cells_correct),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "EvalInstance":
        return cls(
            mask=MaskSpec(
                rec["row_id"],
                rec["task_kind"],
                tuple(rec["masked_columns"]),
                dict(rec["ground_truth"]),
            ),
            prompt_system=rec["prompt_system"],
            prompt_user=rec["prompt_user"],
            response_text=rec["response_text"],
            parse_ok=rec["parse_ok"],
            cells_correct=tuple(rec["cells_correct"]),
            error=rec["error"],
        )


@dataclass
class TaskScore:
    cells_total: int = 0
    cells_correct: int = 0
    rows_total: int = 0
    rows_correct: int = 0

    def add(self, correct_flags, row_counts=True) -> None:
        self.cells_total += len(correct_flags)
        self.cells_correct += sum(bool(f) for f in correct_flags)
        if row_counts:
            self.rows_total += 1
            self.rows_correct += int(bool(correct_flags) and all(correct_flags))

    def accuracy(self, denominator: str = "cells") -> float:
        total = self.cells_total if denominator == "cells" else self.rows_total
        hit = self.cells_correct if denominator == "cells" else self.rows_correct
        return 100.0 * hit / total if total else 0.0


@dataclass
class ScoreReport:
    per_task: dict[str, TaskScore] = field(default_factory=dict)
    group_breakdowns: dict[str, dict[str, dict[str, TaskScore]]] = field(
        default_factory=dict
    )
    complete: bool = True

    def accuracy(self, kind: str, denominator: str = "cells") -> float:
        score = self.per_task.get(kind)
        return score.accuracy(denominator) if score else 0.0

    def to_json(self) -> str:
        def score_dict(s: TaskScore) -> dict:
            return {
                "cells_total": s.cells_total,
                "cells_correct": s.cells_correct,
                "rows_total": s.rows_total,
                "rows_correct": s.rows_correct,
                "accuracy_cells": s.accuracy("cells"),
                "accuracy_rows": s.accuracy("rows"),
            }

        payload = {
            "complete": self.complete,
            "per_task": {k: score_dict(v) for k, v in self.per_task.items()},
            "group_breakdowns": {
                dim: {
                    group: {k: score_dict(v) for k, v in kinds.items()}
                    for group, kinds in groups.items()
                }
                for dim, groups in self.group_breakdowns.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def render_table(self) -> str:
        """Human summary: one accuracy row overall plus per-group rows."""
        kinds = sorted(self.per_task)
        lines = ["Group | " + " | ".join(f"{k} (%)" for k in kinds)]
        lines.append(
            "overall | "
            + " | ".join(f"{self.per_task[k].accuracy():.1f}" for k in kinds)
        )
        for dim in sorted(self.group_breakdowns):
            for group in sorted(self.group_breakdowns[dim]):
                cells = self.group_breakdowns[dim][group]
                row = [f"{dim}={group}"]
                for k in kinds:
                    row.append(f"{cells[k].accuracy():.1f}" if k in cells else "-")
                lines.append(" | ".join(row))
        return "\n".join(lines) + "\n"


def maskable_columns(schedule: Schedule, activity) -> list[str]:
    """Columns eligible for MVP masking: everything except the identity
    columns (id, name) and columns whose serialized value is empty."""
    row = canonical_row(schedule, activity)
    pool = []
    for col, value in row.items():
        if col in (COL_ID, COL_NAME):
            continue
        if value == "":
            continue
        pool.append(col)
    return pool


def make_mask_tasks(schedule: Schedule, kind: str, seed: int = 42) -> list[MaskSpec]:
    """One MaskSpec per activity; MVP column picks are seeded per row."""
    tasks = []
    for act in schedule.activities:
        row = canonical_row(schedule, act)
        if kind == MVP:
            pool = maskable_columns(schedule, act)
            if len(pool) < 3:
                raise TooFewColumnsError(
                    f"row {act.activity_id!r} has only {len(pool)} maskable column(s)"
                )
            gen = prng.derive(seed, "mask", act.activity_id)
            columns = tuple(gen.sample(pool, 3))
        elif kind == DA:
            columns = RELATIONAL_COLUMNS
        elif kind == AP:
            columns = DATE_COLUMNS
        else:
            raise EvalError(f"unknown task kind {kind!r}")
        tasks.append(
            MaskSpec(
                row_id=act.activity_id,
                task_kind=kind,
                masked_columns=columns,
                ground_truth={c: row[c] for c in columns},
            )
        )
    return tasks


def render_masked_row(schedule: Schedule, mask: MaskSpec) -> str:
    """Row text with masked cells blanked and the masked list made explicit."""
    act = schedule.by_id()[mask.row_id]
    row = canonical_row(schedule, act)
    lines = []
    for col, value in row.items():
        shown = MASK_SENTINEL if col in mask.masked_columns else value
        lines.append(f"{col}: {shown}")
    lines.append(f"{MISSING_COLUMNS_LABEL}: {', '.join(mask.masked_columns)}")
    return "\n".join(lines)


def parse_values(raw_text: str, expected_arity: int, k: int = 2) -> Completion:
    """Extract [Value]...[/Value] items; parse failures are data, not errors."""
    cells = []
    for item in _VALUE_RE.findall(raw_text):
        candidates = tuple(c.strip() for c in item.split("|"))[:k]
        cells.append(candidates)
    return Completion(
        raw_text=raw_text,
        parsed_cells=tuple(cells),
        parse_ok=len(cells) == expected_arity,
    )


_DATE_PATTERNS = (
    re.compile(r"^(\d{4})-(\d{1,2})-(\d{1,2})$"),
    re.compile(r"^(\d{4})/(\d{1,2})/(\d{1,2})$"),
)


def canonical_cell(text: str) -> str:
    return " ".join(text.split()).casefold()


def canonical_date(text: str) -> str | None:
    cell = text.strip()
    for pattern in _DATE_PATTERNS:
        m = pattern.match(cell)
        if m:
            year, month, day = (int(g) for g in m.groups())
            try:
                return date(year, month, day).isoformat()
            except ValueError:
                return None
    return None


def column_kind(column: str) -> str:
    return "date" if column in DATE_COLUMNS else "text"


def score_cell(candidates, truth: str, kind: str = "text") -> bool:
    """Correct iff the truth appears among the ranked candidates."""
    if kind == "date":
        truth_canon = canonical_date(truth) or canonical_cell(truth)
        for cand in candidates:
            if (canonical_date(cand) or canonical_cell(cand)) == truth_canon:
                return True
        return False
    truth_canon = canonical_cell(truth)
    return any(canonical_cell(c) == truth_canon for c in candidates)


def score_completion(mask: MaskSpec, completion: Completion) -> tuple[bool, ...]:
    flags = []
    for i, col in enumerate(mask.masked_columns):
        if not completion.parse_ok or i >= len(completion.parsed_cells):
            flags.append(False)
            continue
        flags.append(
            score_cell(
                completion.parsed_cells[i], mask.ground_truth[col], column_kind(col)
            )
        )
    return tuple(flags)


def evaluate_tasks(
    schedule: Schedule,
    tasks: list[MaskSpec],
    gateway: Gateway,
    *,
    static_knowledge: str = "",
    rules: str = "",
    context_provider=None,
    k: int = 2,
) -> list[EvalInstance]:
    """Fan prompts out to the gateway and score each completion.

    Gateway failures are captured per instance rather than raised, so a
    partial run still produces instances; results come back in task order
    regardless of worker interleaving.
    """

    def run_one(mask: MaskSpec) -> EvalInstance:
        row_text = render_masked_row(schedule, mask)
        context_text = context_provider(mask.row_id) if context_provider else ""
        prompt = build_task_prompt(
            mask.task_kind,
            row_text,
            static_knowledge,
            context_text,
            rules,
            masked_columns=list(mask.masked_columns),
            top_k=k,
        )
        try:
            exchange = gateway.complete(prompt.system_text, prompt.user_text)
        except GatewayError as exc:
            return EvalInstance(
                mask=mask,
                prompt_system=prompt.system_text,
                prompt_user=prompt.user_text,
                response_text=None,
                parse_ok=False,
                cells_correct=tuple(False for _ in mask.masked_columns),
                error=f"{type(exc).__name__}: {exc}",
            )
        completion = parse_values(
            exchange.response_text, len(mask.masked_columns), k=k
        )
        return EvalInstance(
            mask=mask,
            prompt_system=prompt.system_text,
            prompt_user=prompt.user_text,
            response_text=exchange.response_text,
            parse_ok=completion.parse_ok,
            cells_correct=score_completion(mask, completion),
        )

    workers = gateway.cfg.max_parallel
    if workers <= 1:
        return [run_one(m) for m in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, tasks))


def build_report(schedule: Schedule, instances: list[EvalInstance]) -> ScoreReport:
    """Aggregate counts overall and per discipline/level/area group."""
    by_id = schedule.by_id()
    report = ScoreReport()
    for dim in GROUP_DIMENSIONS:
        report.group_breakdowns[dim] = {}
    for inst in sorted(instances, key=lambda i: (i.mask.task_kind, i.mask.row_id)):
        kind = inst.mask.task_kind
        report.per_task.setdefault(kind, TaskScore()).add(inst.cells_correct)
        act = by_id.get(inst.mask.row_id)
        if act is None:
            continue
        for dim in GROUP_DIMENSIONS:
            group = getattr(act, dim)
            slot = report.group_breakdowns[dim].setdefault(group, {})
            slot.setdefault(kind, TaskScore()).add(inst.cells_correct)
        if inst.error is not None:
            report.complete = False
    return report


def run_eval(
    schedule: Schedule,
    tasks: list[MaskSpec],
    gateway: Gateway,
    **prompt_inputs,
) -> ScoreReport:
    """Evaluate all tasks and aggregate; gateway failures surface after the
    fold with the partial report attached."""
    instances = evaluate_tasks(schedule, tasks, gateway, **prompt_inputs)
    report = build_report(schedule, instances)
    failures = sum(1 for inst in instances if inst.error is not None)
    if failures:
        raise GatewayEvalError(report, failures)
    return report


# --- preference pairs -----------------------------------------------------------


@dataclass(frozen=True)
class PreferenceRecord:
    prompt_text: str
    chosen_text: str
    rejected_text: str
    task_kind: str
    row_id: str
    context_length_tokens: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "prompt_text": self.prompt_text,
            "chosen_text": self.chosen_text,
            "rejected_text": self.rejected_text,
            "task_kind": self.task_kind,
            "row_id": self.row_id,
            "context_length_tokens": self.context_length_tokens,
            "meta": self.meta,
        }


def _truth_wire(mask: MaskSpec) -> str:
    return wire_values([mask.ground_truth[c] for c in mask.masked_columns])


def _synthesize_rejection(
    schedule: Schedule, mask: MaskSpec, seed: int
) -> tuple[str, str] | None:
    """Corrupt one masked cell with the same column's value from another row."""
    gen = prng.derive(seed, "corrupt", mask.row_id, mask.task_kind)
    columns = list(mask.masked_columns)
    order = gen.sample(columns, len(columns))
    for col in order:
        truth = mask.ground_truth[col]
        alternatives = sorted(
            {
                canonical_row(schedule, act).get(col, "")
                for act in schedule.activities
                if act.activity_id != mask.row_id
            }
            - {truth, ""}
        )
        if alternatives:
            swapped = dict(mask.ground_truth)
            swapped[col] = alternatives[gen.randint(len(alternatives))]
            return wire_values([swapped[c] for c in mask.masked_columns]), col
    return None


def collect_preferences(
    schedule: Schedule,
    instances: list[EvalInstance],
    *,
    synthesize_negatives: bool = False,
    seed: int = 42,
) -> list[PreferenceRecord]:
    """Pair ground-truth completions against observed (or synthetic) rejects.

    Instances sharing (row, kind) contribute a single record: the first
    incorrect completion becomes the rejection, later ones ride along in
    meta. Fully correct groups only pair up when negative synthesis is on.
    """
    groups: dict[tuple[str, str], list[EvalInstance]] = {}
    order: list[tuple[str, str]] = []
    for inst in instances:
        key = (inst.mask.row_id, inst.mask.task_kind)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(inst)

    records = []
    for key in order:
        group = groups[key]
        chosen = _truth_wire(group[0].mask)
        wrong = [
            inst
            for inst in group
            if inst.error is None
            and inst.response_text is not None
            and not inst.all_correct
        ]
        if wrong:
            first = wrong[0]
            if first.response_text == chosen:
                continue
            meta: dict = {}
            if len(wrong) > 1:
                meta["extra_rejected"] = [w.response_text for w in wrong[1:]]
            records.append(
                PreferenceRecord(
                    prompt_text=first.prompt_user,
                    chosen_text=chosen,
                    rejected_text=first.response_text,
                    task_kind=first.mask.task_kind,
                    row_id=first.mask.row_id,
                    context_length_tokens=count_tokens(first.prompt_user),
                    meta=meta,
                )
            )
        elif synthesize_negatives:
            correct = [inst for inst in group if inst.all_correct]
            if not correct:
                continue
            synth = _synthesize_rejection(schedule, correct[0].mask, seed)
            if synth is None:
                continue
            rejected, corrupted_col = synth
            records.append(
                PreferenceRecord(
                    prompt_text=correct[0].prompt_user,
                    chosen_text=chosen,
                    rejected_text=rejected,
                    task_kind=correct[0].mask.task_kind,
                    row_id=correct[0].mask.row_id,
                    context_length_tokens=count_tokens(correct[0].prompt_user),
                    meta={"synthetic_negative": True, "corrupted_column": corrupted_col},
                )
            )
    return records


def preference_store_append(path: Path, record: PreferenceRecord) -> None:
    """One JSON line per record; the single write keeps appends atomic."""
    if record.chosen_text == record.rejected_text:
        raise EvalError("chosen and rejected completions are identical")
    line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)


def preference_store_load(path: Path) -> list[PreferenceRecord]:
    records = []
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            records.append(
                PreferenceRecord(
                    prompt_text=rec["prompt_text"],
                    chosen_text=rec["chosen_text"],
                    rejected_text=rec["rejected_text"],
                    task_kind=rec["task_kind"],
                    row_id=rec["row_id"],
                    context_length_tokens=rec["context_length_tokens"],
                    meta=rec.get("meta", {}),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptRecordError(line_no, str(exc)) from None
    return records


def save_instances(path: Path, instances: list[EvalInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True) + "\n")


def load_instances(path: Path) -> list[EvalInstance]:
    return [
        EvalInstance.from_dict(json.loads(ln))
        for ln in Path(path).read_text("utf-8").splitlines()
        if ln.strip()
    ]
