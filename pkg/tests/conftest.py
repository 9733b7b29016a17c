from __future__ import annotations

import sys
from datetime import date
from pathlib import Path

SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import pytest

from schedkit.schedule import Activity, DependencyLink, Schedule


def make_activity(
    activity_id: str,
    *,
    name: str = "",
    status: str = "Not Started",
    wbs: tuple[str, ...] = ("P",),
    discipline: str = "CSA.Struc.Steel",
    level: str = "SF",
    area: str = "6E",
    zone: str | None = None,
    start: date = date(2024, 1, 1),
    finish: date = date(2024, 1, 8),
    extra: dict[str, str] | None = None,
) -> Activity:
    return Activity(
        activity_id=activity_id,
        name=name or f"Task {activity_id}",
        status=status,
        wbs=wbs,
        discipline=discipline,
        level=level,
        area=area,
        zone=zone,
        current_start=start,
        current_finish=finish,
        extra_attributes=extra or {},
    )


def chain_schedule(ids: tuple[str, ...] = ("A", "B", "C")) -> Schedule:
    acts = tuple(make_activity(i) for i in ids)
    links = tuple(
        DependencyLink(ids[i], ids[i + 1], "FS", 0) for i in range(len(ids) - 1)
    )
    return Schedule(activities=acts, links=links, source_label="chain")


@pytest.fixture
def chain():
    return chain_schedule()
