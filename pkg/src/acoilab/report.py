"""Structured pass/fail reports shared by the model validator and the assumption checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"
STATUSES = (PASS, FAIL, INCONCLUSIVE)


@dataclass
class AssumptionEntry:
    """One checked condition.

    ``condition`` is a stable id such as ``"uc_drift"`` or ``"majorization"``;
    ``constants`` holds fitted numbers, ``location`` the worst-case cell or
    (state, action) pair, and ``margin`` the signed slack at that location
    (negative means violated).
    """

    condition: str
    status: str
    constants: dict[str, Any] = field(default_factory=dict)
    location: Any = None
    margin: float | None = None
    message: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "status": self.status,
            "constants": _plain(self.constants),
            "location": _plain(self.location),
            "margin": _plain(self.margin),
            "message": self.message,
        }


@dataclass
class AssumptionReport:
    entries: list[AssumptionEntry] = field(default_factory=list)

    def add(self, entry: AssumptionEntry) -> AssumptionEntry:
        if any(e.condition == entry.condition for e in self.entries):
            raise ValueError(f"condition {entry.condition!r} already reported")
        self.entries.append(entry)
        return entry

    def __getitem__(self, condition: str) -> AssumptionEntry:
        for e in self.entries:
            if e.condition == condition:
                return e
        raise KeyError(condition)

    def __contains__(self, condition: str) -> bool:
        return any(e.condition == condition for e in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def violations(self) -> list[AssumptionEntry]:
        return [e for e in self.entries if e.status == FAIL]

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {"entries": [e.to_dict() for e in self.entries]}


def _plain(obj):
    """Convert numpy scalars/arrays (possibly nested) into JSON-friendly values."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj
