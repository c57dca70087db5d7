"""Episode metrics: speed, CO2 surrogate, TTC exposure, TET, lane changes and action statistics.

Only quantities accrued at or after the warm-up count. A window with no
vehicle samples yields NaN metrics rather than zeros.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .roadsim.params import EmissionParams
from .roadsim.world import SimulationFault

log = logging.getLogger(__name__)

METRIC_NAMES = ("avg_speed", "co2_per_vehicle", "mean_ttc_exposure", "tet", "lane_changes_per_vehicle")
# +1: larger is better, -1: smaller is better
METRIC_SENSE = {"avg_speed": 1, "co2_per_vehicle": -1, "mean_ttc_exposure": -1, "tet": -1,
                "lane_changes_per_vehicle": -1}
ACTION_RATE_NAMES = ("left", "right", "any", "left_only", "right_only")


@dataclass(frozen=True)
class SafetyConfig:
    ttc_threshold: float = 5.0


def ttc(follower, leader, vehicle_length: float = 5.0) -> float:
    """Same-lane time to collision of ``follower`` behind ``leader`` (objects with ``x`` and ``v``).

    Raises:
        SimulationFault: if the two vehicles overlap.
    """
    gap = leader.x - follower.x - vehicle_length
    if gap < -1e-6:
        raise SimulationFault(f"overlapping vehicles (gap {gap:.3f} m)",
                              {"follower_x": follower.x, "leader_x": leader.x})
    closing = follower.v - leader.v
    if closing <= 0:
        return math.inf
    return max(gap, 0.0) / closing


def co2_rate(v, accel, p: EmissionParams = EmissionParams()):
    """Power-based CO2 emission rate in g/s (vectorised over ``v`` and ``accel``)."""
    v = np.asarray(v, dtype=float)
    accel = np.asarray(accel, dtype=float)
    power = p.mass * v * (accel + p.gravity * p.rolling_coeff) + 0.5 * p.air_density * p.drag_area * v ** 3
    rate = np.maximum(p.idle_rate, p.idle_rate + p.grams_per_joule * np.maximum(power, 0.0))
    return float(rate) if rate.ndim == 0 else rate


def exposure_counts(ttc_series, threshold: float = 5.0):
    """Per-vehicle (steps below threshold, steps observed) from per-step TTC series."""
    below = np.array([int(np.sum(np.asarray(s) < threshold)) for s in ttc_series], dtype=np.int64)
    steps = np.array([len(s) for s in ttc_series], dtype=np.int64)
    return below, steps


def mean_ttc_exposure(below_steps, sim_step: float) -> float:
    """Average over vehicles of the time spent below the TTC threshold (seconds)."""
    below = np.asarray(below_steps)
    if below.size == 0:
        return math.nan
    return float(below.sum() * sim_step / below.size)


def tet(below_steps, travel_steps) -> float:
    """Mean over vehicles of the fraction of travel steps spent below the TTC threshold.

    Vehicles with zero travel time are excluded.
    """
    below = np.asarray(below_steps, dtype=float)
    steps = np.asarray(travel_steps, dtype=float)
    ok = steps > 0
    if (~ok).any():
        log.debug("tet: %d vehicles with zero travel time excluded", int((~ok).sum()))
    if not ok.any():
        return math.nan
    return float(np.mean(below[ok] / steps[ok]))


def action_distribution(action_log) -> dict:
    """Per-lane action rates from a log of (lanes, grids, 2) permission arrays.

    Returns:
        Mapping from ``ACTION_RATE_NAMES`` to arrays of length n_lanes.
    """
    acts = np.asarray(action_log)
    if acts.ndim != 4 or acts.shape[-1] != 2:
        raise ValueError("action log must have shape (steps, lanes, grids, 2)")
    if acts.shape[0] == 0:
        n = acts.shape[1]
        return {k: np.full(n, math.nan) for k in ACTION_RATE_NAMES}
    left = acts[..., 0].astype(bool)
    right = acts[..., 1].astype(bool)
    axes = (0, 2)
    return {
        "left": left.mean(axis=axes),
        "right": right.mean(axis=axes),
        "any": (left | right).mean(axis=axes),
        "left_only": (left & ~right).mean(axis=axes),
        "right_only": (right & ~left).mean(axis=axes),
    }


def lane_change_count(n_changes: int, n_vehicles: int) -> float:
    """Executed lane changes per vehicle that left the road during the metric window."""
    if n_vehicles == 0:
        return math.nan
    return n_changes / n_vehicles


@dataclass
class EpisodeLog:
    """Everything the metrics need from one episode."""

    seed: int
    warmup: float
    sim_step: float
    vehicles: dict  # World.vehicle_summary()
    lane_change_times: np.ndarray
    action_log: list = field(default_factory=list)
    fault: dict = None

    @classmethod
    def from_world(cls, world, seed: int = 0, action_log=None, fault=None) -> "EpisodeLog":
        times = np.array([e.t for e in world.lane_changes], dtype=float)
        return cls(seed, world.warmup, world.road.sim_step, world.vehicle_summary(), times,
                   list(action_log or []), fault)

    @classmethod
    def from_env(cls, env) -> "EpisodeLog":
        return cls.from_world(env.world, env.seed, env.action_log, env.fault)


@dataclass
class EpisodeMetrics:
    seed: int
    avg_speed: float
    co2_per_vehicle: float
    mean_ttc_exposure: float
    tet: float
    lane_changes_per_vehicle: float
    vehicles: int
    lane_changes: int
    action_rates: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "action_rates"}
        for name, vals in self.action_rates.items():
            for l, val in enumerate(vals):
                d[f"lane{l + 1}_{name}"] = float(val)
        return d


def episode_metrics(ep: EpisodeLog) -> EpisodeMetrics:
    """Metrics of one episode over its post-warm-up window (TTC counts use the world's threshold)."""
    veh = ep.vehicles
    steps = np.asarray(veh["window_steps"])
    present = steps > 0
    finished = np.asarray(veh["finished_in_window"])
    n_fin = int(finished.sum())
    n_lc = int(np.sum(ep.lane_change_times >= ep.warmup - 1e-9))
    rates = action_distribution(ep.action_log) if len(ep.action_log) else {}
    if not present.any():
        return EpisodeMetrics(ep.seed, math.nan, math.nan, math.nan, math.nan, math.nan, 0, n_lc, rates)
    time_total = steps[present].sum() * ep.sim_step
    avg_speed = float(np.sum(veh["distance"][present]) / time_total)
    co2 = float(np.sum(veh["co2"][present]) / n_fin) if n_fin else math.nan
    below = np.asarray(veh["ttc_steps"])[present]
    return EpisodeMetrics(
        seed=ep.seed,
        avg_speed=avg_speed,
        co2_per_vehicle=co2,
        mean_ttc_exposure=mean_ttc_exposure(below, ep.sim_step),
        tet=tet(below, steps[present]),
        lane_changes_per_vehicle=lane_change_count(n_lc, n_fin),
        vehicles=n_fin,
        lane_changes=n_lc,
        action_rates=rates,
    )


def uplift(policy: EpisodeMetrics, baseline: EpisodeMetrics) -> dict:
    """Paired percentage uplift per metric; positive always means the policy is better."""
    out = {}
    for name in METRIC_NAMES:
        p, b = getattr(policy, name), getattr(baseline, name)
        if not (math.isfinite(p) and math.isfinite(b)) or b == 0:
            out[name] = 0.0 if p == b else math.nan
            continue
        out[name] = METRIC_SENSE[name] * (p - b) / abs(b) * 100.0
    return out


def summarize(rows: list) -> dict:
    """Mean and standard deviation of every numeric metric over episodes."""
    out = {}
    if not rows:
        return out
    for key in rows[0]:
        vals = np.array([r[key] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        out[key] = (float(vals.mean()) if vals.size else math.nan,
                    float(vals.std(ddof=1)) if vals.size > 1 else 0.0)
    return out


def write_rows_csv(path, rows: list, header: list = None, comment: str = None) -> None:
    """CSV with a header row; ``comment`` (e.g. the config hash) goes in a leading ``#`` line."""
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_rows_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
