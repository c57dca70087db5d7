"""Microscopic multi-lane freeway simulator."""

from .idm import (NO_LEADER_GAP, equilibrium_speed, equilibrium_state, idm_acceleration,
                  jam_density)
from .lanechange import Neighbor, Neighbors, lane_change_intent, safety_check
from .params import (DEMAND_LEVELS, ConfigError, DemandConfig, EmissionParams, IdmParams,
                     LaneChangeParams, RoadConfig, ScenarioEvent)
from .world import (LaneChangeEvent, SimulationFault, Vehicle, World, apply_event,
                    free_flow_speed_for_inflow, spawn_demand, spawn_probability)

__all__ = [
    "NO_LEADER_GAP", "equilibrium_speed", "equilibrium_state", "idm_acceleration", "jam_density",
    "Neighbor", "Neighbors", "lane_change_intent", "safety_check", "DEMAND_LEVELS", "ConfigError",
    "DemandConfig", "EmissionParams", "IdmParams", "LaneChangeParams", "RoadConfig", "ScenarioEvent",
    "LaneChangeEvent", "SimulationFault", "Vehicle", "World", "apply_event",
    "free_flow_speed_for_inflow", "spawn_demand", "spawn_probability",
]
