"""Configuration records for the microscopic freeway simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    """Raised when a road, demand or event configuration is invalid."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent driver model parameters (defaults: 5-lane freeway calibration)."""

    vehicle_length: float = 5.0
    desired_speed: float = 24.59
    time_gap: float = 1.4
    min_gap: float = 2.5
    accel_exponent: float = 4.0
    max_accel: float = 0.73
    comfort_decel: float = 1.67

    def __post_init__(self):
        for name in ("vehicle_length", "desired_speed", "time_gap", "min_gap",
                     "accel_exponent", "max_accel", "comfort_decel"):
            val = getattr(self, name)
            _require(math.isfinite(val) and val > 0, f"IdmParams.{name} must be positive, got {val}")
        _require(self.accel_exponent >= 1, "IdmParams.accel_exponent must be >= 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.desired_speed, self.time_gap, self.min_gap, self.accel_exponent,
                         self.max_accel, self.comfort_decel, self.vehicle_length])


@dataclass(frozen=True)
class RoadConfig:
    """Straight multi-lane road. Lane 1 is the rightmost lane."""

    length: float = 1000.0
    lanes: int = 5
    lane_width: float = 3.2
    speed_limit: float = 24.59
    sim_step: float = 0.1
    lc_duration: Optional[float] = None
    lateral_resolution: float = 0.8

    def __post_init__(self):
        _require(self.length > 0, "road length must be positive")
        _require(self.lanes >= 1, "road needs at least one lane")
        _require(self.lane_width > 0 and self.lateral_resolution > 0, "lane geometry must be positive")
        _require(self.sim_step > 0, "sim_step must be positive")
        if self.lc_duration is None:
            # 1.6 m/s lateral speed
            object.__setattr__(self, "lc_duration", self.lane_width / 1.6)
        _require(self.lc_duration > 0, "lc_duration must be positive")
        steps = self.lc_duration / self.sim_step
        _require(abs(steps - round(steps)) < 1e-9, "lc_duration must be a multiple of sim_step")

    @property
    def lc_steps(self) -> int:
        return int(round(self.lc_duration / self.sim_step))

    @property
    def lateral_speed(self) -> float:
        return self.lane_width / self.lc_duration


@dataclass(frozen=True)
class LaneChangeParams:
    """Thresholds of the two-intent lane-change model.

    ``keep_right_eps`` is the tolerated anticipated-speed loss for a keep-right
    change; ``gain_left``/``gain_right`` are the speed-gain thresholds (rightward
    gains need more deliberation). The ``persist_*`` times are how long a desire
    must hold before it becomes an actionable intent. Defaults are calibrated so a
    stable low-demand baseline makes about 0.1 lane changes per vehicle.
    """

    keep_right_eps: float = 0.5
    gain_left: float = 2.5
    gain_right: float = 3.5
    persist_left: float = 4.0
    persist_right: float = 4.0
    persist_keep_right: float = 30.0
    cooldown: float = 15.0
    b_safe: float = 2.0
    lookahead: float = 150.0

    def __post_init__(self):
        for name in ("keep_right_eps", "gain_left", "gain_right", "persist_left", "persist_right",
                     "persist_keep_right", "cooldown", "b_safe", "lookahead"):
            _require(getattr(self, name) >= 0, f"LaneChangeParams.{name} must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.keep_right_eps, self.gain_left, self.gain_right, self.persist_left,
                         self.persist_right, self.persist_keep_right, self.cooldown, self.b_safe,
                         self.lookahead])


@dataclass(frozen=True)
class EmissionParams:
    """Power-based CO2 surrogate coefficients for a mid-size petrol car."""

    mass: float = 1500.0
    rolling_coeff: float = 0.01
    drag_area: float = 0.7
    air_density: float = 1.2
    idle_rate: float = 0.5
    grams_per_joule: float = 2.9e-4
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mass", "rolling_coeff", "drag_area", "air_density", "idle_rate",
                     "grams_per_joule", "gravity"):
            _require(getattr(self, name) > 0, f"EmissionParams.{name} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.mass, self.rolling_coeff, self.drag_area, self.air_density,
                         self.idle_rate, self.grams_per_joule, self.gravity])


# inflow (veh/h/lane) and spawn speed (m/s) of each demand level
DEMAND_LEVELS = {
    "low": (1100.0, 22.93),
    "high": (1495.0, 20.76),
    "congested_high": (1410.0, 6.53),
}


@dataclass(frozen=True)
class DemandConfig:
    per_lane_inflow: float = 1100.0
    cv_rate: float = 1.0
    seed: int = 0
    spawn_speed: Optional[float] = None

    def __post_init__(self):
        _require(math.isfinite(self.per_lane_inflow) and self.per_lane_inflow >= 0,
                 "per_lane_inflow must be non-negative")
        _require(0.0 <= self.cv_rate <= 1.0, "cv_rate must lie in [0, 1]")
        _require(self.per_lane_inflow <= 36000.0, "inflow exceeds one arrival per step")

    @classmethod
    def from_level(cls, level: str, cv_rate: float = 1.0, seed: int = 0) -> "DemandConfig":
        if level not in DEMAND_LEVELS:
            raise ConfigError(f"unknown demand level {level!r}; expected one of {sorted(DEMAND_LEVELS)}")
        inflow, speed = DEMAND_LEVELS[level]
        return cls(per_lane_inflow=inflow, cv_rate=cv_rate, seed=seed, spawn_speed=speed)


@dataclass
class ScenarioEvent:
    """A safety-critical event. Lanes are 1-based, times in seconds."""

    kind: str
    lane: int
    x_range: tuple
    t_range: tuple
    degrade_time_gap: float = 6.0
    stop_decel: float = 3.0
    stop_hold: float = 60.0
    # runtime state of a vehicle_stop event
    vehicle_id: int = field(default=-1, compare=False)

    def __post_init__(self):
        _require(self.kind in ("lane_degrade", "vehicle_stop"), f"unknown event kind {self.kind!r}")
        self.x_range = tuple(float(v) for v in self.x_range)
        self.t_range = tuple(float(v) for v in self.t_range)
        _require(self.x_range[0] <= self.x_range[1], "event x_range must be ordered")
        _require(self.t_range[0] <= self.t_range[1], "event t_range must be ordered")
        if self.kind == "lane_degrade":
            _require(4.0 <= self.degrade_time_gap <= 10.0, "degrade_time_gap must lie in [4, 10] s")
        else:
            _require(self.stop_decel > 0 and self.stop_hold >= 0, "stop_decel/stop_hold invalid")

    def validate_for(self, road: RoadConfig) -> None:
        _require(1 <= self.lane <= road.lanes, f"event lane {self.lane} outside 1..{road.lanes}")
        _require(0.0 <= self.x_range[0] and self.x_range[1] <= road.length,
                 f"event x_range {self.x_range} outside the road")

    def active(self, t: float) -> bool:
        return self.t_range[0] <= t <= self.t_range[1]
