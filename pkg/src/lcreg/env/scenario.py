"""Scenario definitions (Stable Flow, Lane Degrade, Vehicle Stop) and their YAML form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from ..roadsim.params import (DEMAND_LEVELS, ConfigError, DemandConfig, RoadConfig, ScenarioEvent)

SCENARIOS = ("stable_flow", "lane_degrade", "vehicle_stop")


@dataclass(frozen=True)
class EnvConfig:
    """RL timescale. ``episode_length`` counts env steps after the warm-up."""

    env_step: float = 4.0
    reward_step: float = 1.0
    episode_length: int = 400
    warmup: float = 120.0
    grid_length: float = 100.0

    def validate(self, sim_step: float) -> None:
        def multiple(a, b):
            r = a / b
            return abs(r - round(r)) < 1e-9 and round(r) >= 1

        if not multiple(self.env_step, self.reward_step):
            raise ConfigError("env_step must be a multiple of reward_step")
        if not multiple(self.reward_step, sim_step):
            raise ConfigError("reward_step must be a multiple of the simulation step")
        if not multiple(self.warmup, sim_step) and self.warmup != 0:
            raise ConfigError("warmup must be a multiple of the simulation step")
        if self.episode_length < 0:
            raise ConfigError("episode_length must be non-negative")


@dataclass(frozen=True)
class EventRanges:
    """Randomisation ranges for the safety-critical event of a scenario.

    Times are measured from the start of the episode (t = 0 at reset).
    """

    lanes: tuple = ()  # empty: any lane
    start_x: tuple = (200.0, 700.0)
    zone_length: tuple = (100.0, 300.0)
    start_t: tuple = (150.0, 600.0)
    duration: tuple = (300.0, 900.0)
    degrade_time_gap: tuple = (4.0, 10.0)
    stop_decel: float = 3.0
    stop_hold: tuple = (30.0, 120.0)
    trigger_window: float = 30.0

    def __post_init__(self):
        lo, hi = self.degrade_time_gap
        if not 4.0 <= lo <= hi <= 10.0:
            raise ConfigError("degrade_time_gap range must lie within [4, 10] s")
        for name in ("start_x", "zone_length", "start_t", "duration", "stop_hold"):
            a, b = getattr(self, name)
            if a > b or a < 0:
                raise ConfigError(f"EventRanges.{name} must be an ordered non-negative pair")


@dataclass
class Scenario:
    """Everything needed to reproduce an episode apart from the seed."""

    name: str = "stable_flow"
    demand: str = "low"
    cv_rate: float = 1.0
    per_lane_inflow: Optional[float] = None
    road: RoadConfig = field(default_factory=RoadConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ranges: EventRanges = field(default_factory=EventRanges)
    events: list = field(default_factory=list)  # fixed events; replaces randomisation when given

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        if self.demand not in DEMAND_LEVELS:
            raise ConfigError(f"unknown demand {self.demand!r}; expected one of {sorted(DEMAND_LEVELS)}")
        if not 0.0 <= self.cv_rate <= 1.0:
            raise ConfigError("cv_rate must lie in [0, 1]")
        self.env.validate(self.road.sim_step)
        n = self.road.length / self.env.grid_length
        if abs(n - round(n)) > 1e-9:
            raise ConfigError("grid_length must divide the road length")
        for ev in self.events:
            ev.validate_for(self.road)
        for lane in self.ranges.lanes:
            if not 1 <= lane <= self.road.lanes:
                raise ConfigError(f"event lane {lane} outside 1..{self.road.lanes}")

    @property
    def n_grids(self) -> int:
        return int(round(self.road.length / self.env.grid_length))

    def demand_config(self, seed: int) -> DemandConfig:
        inflow, speed = DEMAND_LEVELS[self.demand]
        if self.per_lane_inflow is not None:
            inflow, speed = self.per_lane_inflow, None
        return DemandConfig(per_lane_inflow=inflow, cv_rate=self.cv_rate, seed=seed, spawn_speed=speed)

    def draw_events(self, rng: np.random.Generator) -> list:
        """Events of one episode: the fixed list, or one random event for the hazard scenarios."""
        if self.events:
            return [dataclasses.replace(ev, vehicle_id=-1) for ev in self.events]
        if self.name == "stable_flow":
            return []
        r = self.ranges
        lanes = r.lanes or tuple(range(1, self.road.lanes + 1))
        lane = int(rng.choice(lanes))
        x0 = float(rng.uniform(*r.start_x))
        t0 = float(rng.uniform(*r.start_t))
        if self.name == "lane_degrade":
            x1 = min(x0 + float(rng.uniform(*r.zone_length)), self.road.length)
            t1 = t0 + float(rng.uniform(*r.duration))
            gap = float(rng.uniform(*r.degrade_time_gap))
            return [ScenarioEvent("lane_degrade", lane, (x0, x1), (t0, t1), degrade_time_gap=gap)]
        x1 = min(x0 + float(rng.uniform(*r.zone_length)), self.road.length)
        hold = float(rng.uniform(*r.stop_hold))
        return [ScenarioEvent("vehicle_stop", lane, (x0, x1), (t0, t0 + r.trigger_window),
                              stop_decel=r.stop_decel, stop_hold=hold)]

    # -------------------------------------------------------------- serialisation
    def to_dict(self) -> dict:
        def ev_dict(ev):
            d = dataclasses.asdict(ev)
            d.pop("vehicle_id")
            d["x_range"] = list(ev.x_range)
            d["t_range"] = list(ev.t_range)
            return d

        ranges = dataclasses.asdict(self.ranges)
        ranges = {k: list(v) if isinstance(v, tuple) else v for k, v in ranges.items()}
        return {
            "scenario": self.name,
            "demand": self.demand,
            "cv_rate": self.cv_rate,
            "per_lane_inflow": self.per_lane_inflow,
            "road": dataclasses.asdict(self.road),
            "env": dataclasses.asdict(self.env),
            "event_ranges": ranges,
            "events": [ev_dict(ev) for ev in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"scenario", "demand", "cv_rate", "per_lane_inflow", "road", "env", "event_ranges", "events"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        try:
            road = RoadConfig(**(d.get("road") or {}))
            env = EnvConfig(**(d.get("env") or {}))
            rd = dict(d.get("event_ranges") or {})
            rd = {k: tuple(v) if isinstance(v, list) else v for k, v in rd.items()}
            ranges = EventRanges(**rd)
            events = [ScenarioEvent(**e) for e in (d.get("events") or [])]
        except TypeError as exc:
            raise ConfigError(f"bad scenario field: {exc}") from exc
        return cls(name=d.get("scenario", "stable_flow"), demand=d.get("demand", "low"),
                   cv_rate=float(d.get("cv_rate", 1.0)), per_lane_inflow=d.get("per_lane_inflow"),
                   road=road, env=env, ranges=ranges, events=events)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario.to_dict(), fh, sort_keys=False)
