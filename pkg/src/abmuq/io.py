"""CSV and JSON interchange formats for every pipeline stage."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .abm import SimOutcome
from .design import ReplicatedDesign
from .seqdesign import Run


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_design_csv(path: str | Path, points: np.ndarray,
                     replicates: np.ndarray | None = None) -> None:
    points = np.atleast_2d(points)
    p = points.shape[1]
    header = [f"x{j + 1}" for j in range(p)]
    rows = [list(pt) for pt in points]
    if replicates is not None:
        header.append("replicates")
        rows = [r + [int(a)] for r, a in zip(rows, replicates)]
    write_csv(path, header, rows)


def read_design_csv(path: str | Path) -> ReplicatedDesign:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"design file {path} is empty")
        has_reps = header[-1] == "replicates"
        p = len(header) - (1 if has_reps else 0)
        pts, reps = [], []
        for row in reader:
            pts.append([float(v) for v in row[:p]])
            reps.append(int(row[p]) if has_reps else 1)
    if not pts:
        raise ValueError(f"design file {path} has 0 rows")
    return ReplicatedDesign(np.array(pts), np.array(reps))


RUNS_HEADER = ["x1", "x2", "seed", "outcome", "time", "final_sheep", "final_wolves"]


def write_runs_csv(path: str | Path, rows: list[tuple[np.ndarray, int, SimOutcome]]) -> None:
    """One row per simulator run: location, seed, outcome fields."""
    out = []
    for x, seed, outcome in rows:
        out.append([x[0], x[1], int(seed), outcome.outcome, outcome.time,
                    outcome.final_sheep, outcome.final_wolves])
    write_csv(path, RUNS_HEADER, out)


def read_runs_csv(path: str | Path) -> list[tuple[np.ndarray, int, SimOutcome]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUNS_HEADER:
            raise ValueError(f"unexpected runs header in {path}: {reader.fieldnames}")
        for rec in reader:
            x = np.array([float(rec["x1"]), float(rec["x2"])])
            outcome = SimOutcome(rec["outcome"], int(rec["time"]),
                                 int(rec["final_sheep"]), int(rec["final_wolves"]))
            rows.append((x, int(rec["seed"]), outcome))
    if not rows:
        raise ValueError(f"runs file {path} has 0 rows")
    return rows


def runs_to_training(rows: list[tuple[np.ndarray, int, SimOutcome]]) -> list[Run]:
    """Convert ABM run records to generic runs (censored -> no output)."""
    return [Run(tuple(x), seed, float(o.time) if o.is_extinct else None)
            for x, seed, o in rows]


def write_json(path: str | Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
