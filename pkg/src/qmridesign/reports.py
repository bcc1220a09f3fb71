"""Report CSV schema and protocol artifacts.

The report schema is versioned; appending to a file whose header does not
match the current schema is refused rather than silently mixed. Floats
are written with full repr precision so re-runs are byte-comparable
(wall-clock is the one intentionally varying column).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .ivim import AcquisitionProtocol

__all__ = [
    "REPORT_SCHEMA_VERSION",
    "REPORT_COLUMNS",
    "ReportRow",
    "SchemaMismatchError",
    "append_report_rows",
    "read_report",
    "save_protocol_artifact",
    "load_protocol_artifact",
    "write_curve",
]

REPORT_SCHEMA_VERSION = 1

REPORT_COLUMNS = (
    "schema_version",
    "task",
    "method",
    "protocol_id",
    "b_values",
    "te_s",
    "snr",
    "mean_accuracy",
    "std_accuracy",
    "n_repeats",
    "config_hash",
    "seed",
    "wall_clock_s",
)


class SchemaMismatchError(ValueError):
    """Existing report header does not match the current schema."""


@dataclass(frozen=True)
class ReportRow:
    task: str
    method: str
    protocol_id: str
    b_values: tuple
    te_s: float
    snr: float
    mean_accuracy: float
    std_accuracy: float
    n_repeats: int
    config_hash: str
    seed: int
    wall_clock_s: float

    def as_record(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "task": self.task,
            "method": self.method,
            "protocol_id": self.protocol_id,
            "b_values": ";".join(repr(float(b)) for b in self.b_values),
            "te_s": repr(self.te_s),
            "snr": repr(self.snr),
            "mean_accuracy": repr(self.mean_accuracy),
            "std_accuracy": repr(self.std_accuracy),
            "n_repeats": self.n_repeats,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "wall_clock_s": f"{self.wall_clock_s:.3f}",
        }


def append_report_rows(path, rows) -> None:
    path = Path(path)
    exists = path.exists()
    if exists:
        with path.open(newline="") as handle:
            header = next(csv.reader(handle), None)
        if header != list(REPORT_COLUMNS):
            raise SchemaMismatchError(
                f"report {path} has header {header}, expected {list(REPORT_COLUMNS)}"
            )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS)
        if not exists:
            writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())


def read_report(path):
    """Rows as dicts with numeric fields parsed back."""
    records = []
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(REPORT_COLUMNS):
            raise SchemaMismatchError(
                f"report {path} has header {reader.fieldnames}, expected {list(REPORT_COLUMNS)}"
            )
        for record in reader:
            if int(record["schema_version"]) != REPORT_SCHEMA_VERSION:
                raise SchemaMismatchError(
                    f"row schema version {record['schema_version']} not supported"
                )
            record["b_values"] = tuple(float(b) for b in record["b_values"].split(";"))
            for key in ("te_s", "snr", "mean_accuracy", "std_accuracy", "wall_clock_s"):
                record[key] = float(record[key])
            for key in ("n_repeats", "seed"):
                record[key] = int(record[key])
            records.append(record)
    return records


ARTIFACT_SCHEMA_VERSION = 1


def save_protocol_artifact(
    path,
    protocol: AcquisitionProtocol,
    te_s: float,
    method: str,
    protocol_id: str,
    config_hash: str,
    seed: int,
    objective_value: float | None = None,
    extra: dict | None = None,
) -> None:
    payload = {
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "protocol_id": protocol_id,
        "method": method,
        "b_values": list(protocol.b_values),
        "te_s": te_s,
        "objective_value": objective_value,
        "config_hash": config_hash,
        "seed": seed,
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_protocol_artifact(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != ARTIFACT_SCHEMA_VERSION:
        raise ValueError(f"protocol artifact schema {payload.get('schema_version')} not supported")
    return AcquisitionProtocol(tuple(payload["b_values"])), payload


def write_curve(path, curve) -> None:
    """Training curve rows (step, mean_episode_reward, best_reward) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "mean_episode_reward", "best_reward"])
        for step, mean_reward, best in curve:
            writer.writerow([step, repr(float(mean_reward)), repr(float(best))])
