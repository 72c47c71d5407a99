"""CSV / JSON export of closed-loop results."""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__
from ..barrier import BarrierFunction
from .experiment import BenchmarkTable, TrialRecord, collision_rate

CSV_COLUMNS = ("trial", "step", "x", "y", "theta", "v", "omega", "h1", "h2", "safe")


def version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def trial_rows(record: TrialRecord, barriers: Sequence[BarrierFunction]):
    states = record.trajectory.states
    controls = record.trajectory.controls
    hvals = [bf.h(states) for bf in barriers[:2]]
    for k, s in enumerate(states):
        u = controls[k] if k < len(controls) else (None, None)
        h1 = hvals[0][k] if len(hvals) > 0 else None
        h2 = hvals[1][k] if len(hvals) > 1 else None
        yield [
            record.trial,
            k,
            _fmt(s[0]),
            _fmt(s[1]),
            _fmt(s[2]) if len(s) > 2 else "",
            _fmt(u[0]),
            _fmt(u[1]) if len(u) > 1 else "",
            _fmt(h1),
            _fmt(h2),
            int(bool(record.safe[k])),
        ]


def trial_summary(record: TrialRecord) -> dict:
    return {
        "trial": record.trial,
        "algorithm": record.mode,
        "samples": record.samples,
        "steps": record.steps,
        "collisions": record.collisions,
        "collision_rate": collision_rate(record),
        "ttf": record.ttf,
    }


def write_csv(records: Sequence[TrialRecord], path: str | Path, barriers: Sequence[BarrierFunction] = ()) -> Path:
    """One row per visited state; the final state has empty input columns."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                writer.writerows(trial_rows(rec, barriers))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_summary(
    records: Sequence[TrialRecord],
    path: str | Path,
    table: Optional[BenchmarkTable] = None,
    config: Optional[dict] = None,
) -> Path:
    path = Path(path)
    summary = {
        "version": version_string(),
        "config": config,
        "table": [asdict(r) for r in table.rows] if table is not None else [],
        "trials": [trial_summary(r) for r in records],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def export_results(
    records: Sequence[TrialRecord],
    path: str | Path,
    barriers: Sequence[BarrierFunction] = (),
    table: Optional[BenchmarkTable] = None,
    config: Optional[dict] = None,
    stem: str = "trajectories",
) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>_summary.json`` under directory ``path``."""
    out = Path(path)
    return (
        write_csv(records, out / f"{stem}.csv", barriers),
        write_summary(records, out / f"{stem}_summary.json", table, config),
    )


def read_collision_rates(csv_path: str | Path) -> dict[int, float]:
    """Per-trial unsafe fraction recomputed from an exported CSV."""
    counts: dict[int, list[int]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            c = counts.setdefault(int(row["trial"]), [0, 0])
            c[0] += row["safe"] == "0"
            c[1] += 1
    return {t: bad / total for t, (bad, total) in counts.items()}


def states_from_csv(csv_path: str | Path, trial: int) -> np.ndarray:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if int(r["trial"]) == trial]
    return np.array([[float(r["x"]), float(r["y"]), float(r["theta"])] for r in rows])
