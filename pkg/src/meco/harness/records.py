"""Run records and their on-disk formats.

Trace files hold only quantities that are a deterministic function of the
config and seed, so repeated runs give byte-identical traces.  Wall-clock
times go to a separate ``timing_<cell>.csv``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["RunRecord", "ConfigMismatchError", "fmt", "write_csv", "write_summary", "TRACE_COLUMNS"]

TRACE_COLUMNS = ("step", "metric", "grad_norm", "log_u", "clip_events")


class ConfigMismatchError(RuntimeError):
    pass


def fmt(value) -> str:
    """Shortest round-trip text for a number; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool,)):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


@dataclass
class RunRecord:
    """Trace and summary of one (method, seed) cell."""

    cell: str
    method: str
    seed: int
    config_hash: str
    metric_name: str = "mse"
    rows: list[tuple] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def log(self, step, metric, grad_norm=None, log_u=None, clip_events=0, wall_ms=0.0):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError(f"trace steps must increase: {step} after {self.rows[-1][0]}")
        self.rows.append((int(step), metric, grad_norm, log_u, int(clip_events)))
        self.wall_ms.append(float(wall_ms))

    @property
    def last(self) -> dict:
        return dict(zip(TRACE_COLUMNS, self.rows[-1])) if self.rows else {}

    def finalize(self, **extra) -> dict:
        last = self.last
        self.summary = {
            "cell": self.cell,
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "steps": last.get("step", 0),
            f"final_{self.metric_name}": last.get("metric"),
            "clip_events": last.get("clip_events", 0),
            "status": "ok",
            **extra,
        }
        return self.summary

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        header = list(TRACE_COLUMNS)
        header[1] = self.metric_name
        write_csv(out_dir / f"trace_{self.cell}.csv", header + ["config_hash"],
                  [list(r) + [self.config_hash] for r in self.rows])
        write_csv(out_dir / f"timing_{self.cell}.csv", ["step", "wall_ms"],
                  [(r[0], round(w, 3)) for r, w in zip(self.rows, self.wall_ms)])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_summary(out_dir, config_doc: dict, config_hash: str, payload: dict) -> Path:
    """Write ``summary.json``; refuse to overwrite one produced by a different config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    check_output_dir(out_dir, config_hash)
    path = out_dir / "summary.json"
    doc = {"config_hash": config_hash, "config": config_doc, **payload}
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def check_output_dir(out_dir, config_hash: str) -> None:
    """Fail early if ``out_dir`` already holds results from another config."""
    path = Path(out_dir) / "summary.json"
    if path.exists():
        try:
            previous = json.loads(path.read_text()).get("config_hash")
        except json.JSONDecodeError:
            return
        if previous is not None and previous != config_hash:
            raise ConfigMismatchError(
                f"{path} was produced by config {previous}, not {config_hash}; use a fresh output directory"
            )
