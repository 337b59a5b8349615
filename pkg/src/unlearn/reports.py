"""Structured experiment records with deterministic JSON/CSV output."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _clean(value.item())
    return value


@dataclass
class ExperimentReport:
    name: str
    params: dict = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({
            "name": self.name,
            "params": self.params,
            "metrics": self.metrics,
            "columns": self.columns,
            "rows": self.rows,
            "traces": self.traces,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def write(self, path) -> list[Path]:
        """Write ``<stem>.json``; also ``<stem>.csv`` when the report has a table."""
        path = Path(path)
        written = []
        if path.suffix == ".csv":
            path.write_text(self.to_csv())
            written.append(path)
            json_path = path.with_suffix(".json")
        else:
            json_path = path if path.suffix == ".json" else path.with_suffix(".json")
            if self.columns:
                csv_path = json_path.with_suffix(".csv")
                csv_path.write_text(self.to_csv())
                written.append(csv_path)
        json_path.write_text(self.to_json())
        written.append(json_path)
        return written
