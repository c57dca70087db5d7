"""Multi-agent lane-change regulation environment."""

from .regulation import (N_ACTIONS, RegulationEnv, RewardWeights, StepInfo, decode_actions,
                         encode_actions, reward, reward_components, reward_field)
from .scenario import SCENARIOS, EnvConfig, EventRanges, Scenario, load_scenario, save_scenario

__all__ = [
    "N_ACTIONS", "RegulationEnv", "RewardWeights", "StepInfo", "decode_actions", "encode_actions",
    "reward", "reward_components", "reward_field", "SCENARIOS", "EnvConfig", "EventRanges", "Scenario",
    "load_scenario", "save_scenario",
]
