"""Trajectory CSV files."""

from __future__ import annotations

import csv

TRAJECTORY_COLUMNS = ("t", "id", "lane", "x", "v", "accel", "is_cv", "lc_state")


def write_trajectory_csv(path, trajectory) -> None:
    """Write ``World.trajectory`` tuples; lanes are 1-based, ``lc_state`` is none/left/right."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t, vid, lane, x, v, acc, cv, state in trajectory:
            w.writerow([f"{t:g}", vid, lane, repr(x), repr(v), repr(acc), int(cv), state])


def read_trajectory_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append((float(r["t"]), int(r["id"]), int(r["lane"]), float(r["x"]), float(r["v"]),
                        float(r["accel"]), bool(int(r["is_cv"])), r["lc_state"]))
    return out
