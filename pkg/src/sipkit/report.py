"""Tabular reports and their CSV/JSON serialization.

Floats in CSV are written with 17 significant digits and parse back to the
same binary value; JSON uses Python's shortest round-trip float repr.  Missing
cells are empty in CSV and ``null`` in JSON.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SITE_COLUMNS = ("site", "analytic_density", "exact_density", "kmc_density", "kmc_stderr", "coefficient")


@dataclass
class Report:
    command: str
    columns: tuple[str, ...]
    rows: list[dict[str, Any]]
    diagnostics: dict[str, Any] = field(default_factory=dict)
    passed: bool = True

    def table(self) -> list[list[Any]]:
        return [[row.get(c) for c in self.columns] for row in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "passed": self.passed,
            "columns": list(self.columns),
            "rows": self.table(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Report":
        columns = tuple(data["columns"])
        rows = [dict(zip(columns, r)) for r in data["rows"]]
        return cls(data["command"], columns, rows, data.get("diagnostics", {}), data.get("passed", True))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def to_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.table():
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def parse_csv(text: str) -> tuple[tuple[str, ...], list[dict[str, Any]]]:
    reader = csv.reader(io.StringIO(text))
    columns = tuple(next(reader))
    return columns, [dict(zip(columns, (_parse_cell(c) for c in row))) for row in reader]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def to_json(report: Report) -> str:
    return json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=False) + "\n"


def diagnostics_json(report: Report) -> str:
    payload = {"command": report.command, "passed": report.passed, "diagnostics": report.diagnostics}
    return json.dumps(_jsonable(payload), indent=2) + "\n"


def write_report(report: Report, path: Path, fmt: str) -> list[Path]:
    """Write ``report``; CSV output gets a ``.json`` diagnostics sidecar."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(to_json(report))
        return [path]
    sidecar = path.with_suffix(".json")
    path.write_text(to_csv(report))
    sidecar.write_text(diagnostics_json(report))
    return [path, sidecar]


def read_report(path: Path, fmt: str) -> Report:
    if fmt == "json":
        return Report.from_dict(json.loads(Path(path).read_text()))
    columns, rows = parse_csv(Path(path).read_text())
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    return Report(meta["command"], columns, rows, meta["diagnostics"], meta["passed"])
