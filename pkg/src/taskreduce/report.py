"""Experiment reports: JSON with every recorded quantity plus a CSV of per-row data."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def plain(x):
    """Convert numpy scalars/arrays and tuples into JSON-ready Python values."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if x is None:
        return ""
    return str(x)


def dumps(doc) -> str:
    return json.dumps(plain(doc), indent=1, sort_keys=False) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def wilson(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    d = 1 + z * z / n
    c = (p + z * z / (2 * n)) / d
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / d
    return max(0.0, c - h), min(1.0, c + h)


@dataclass
class ExperimentReport:
    name: str
    parameters: dict
    quantities: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def check(self, name: str, ok) -> bool:
        self.verdicts[name] = bool(ok)
        return bool(ok)

    def to_json(self) -> dict:
        return plain(
            {
                "name": self.name,
                "parameters": self.parameters,
                "quantities": self.quantities,
                "verdicts": self.verdicts,
                "passed": self.passed,
                "seeds": self.seeds,
                "notes": self.notes,
                "rows": len(self.rows),
            }
        )

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.name}.json"]
        paths[0].write_text(dumps(self.to_json()))
        if self.rows:
            paths.append(out / f"{self.name}.csv")
            paths[1].write_text(rows_to_csv(self.rows))
        return paths
