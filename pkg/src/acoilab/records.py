"""Result records: a JSON document plus one CSV file per table."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__


def plain(obj):
    """Convert numpy containers and scalars to JSON-ready Python values (non-finite floats as strings)."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if hasattr(obj, "to_dict"):
        return plain(obj.to_dict())
    return obj


def format_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return "" if x is None else str(x)


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} cells, table {self.name!r} has {len(self.columns)} columns")
        self.rows.append(list(row))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([format_cell(x) for x in r])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [self.columns] + [[_short(x) for x in r] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        return f"[{self.name}]\n" + "\n".join(lines)


def _short(x) -> str:
    if isinstance(x, (float, np.floating)) and not isinstance(x, bool):
        return "%.6g" % float(x)
    return format_cell(x)


@dataclass
class ResultRecord:
    command: str
    config_hash: str
    outputs: dict = field(default_factory=dict)
    tables: list[Table] = field(default_factory=list)
    status: str = "ok"
    exit_code: int = 0
    override_checks: bool = False
    seed: int | None = None
    wall_clock: float = 0.0

    @property
    def run_id(self) -> str:
        # derived from the inputs only, so identical configs give identical records
        return f"{self.command}-{self.config_hash[:16]}"

    def table(self, name: str, columns) -> Table:
        t = Table(name, list(columns))
        self.tables.append(t)
        return t

    def to_dict(self, include_clock: bool = True) -> dict:
        d = {
            "run_id": self.run_id,
            "command": self.command,
            "config_hash": self.config_hash,
            "version": __version__,
            "status": self.status,
            "exit_code": self.exit_code,
            "override_checks": self.override_checks,
            "seed": self.seed,
            "outputs": plain(self.outputs),
            "tables": [t.name for t in self.tables],
        }
        if include_clock:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, include_clock: bool = True) -> str:
        return json.dumps(self.to_dict(include_clock), sort_keys=True, indent=2) + "\n"

    def write(self, directory, formats=("json", "csv")) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            p = out / "record.json"
            p.write_text(self.to_json(), newline="\n")
            written.append(p)
        if "csv" in formats:
            for t in self.tables:
                p = out / f"{t.name}.csv"
                p.write_text(t.to_csv(), newline="\n")
                written.append(p)
        return written


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
