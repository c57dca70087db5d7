"""Shared-parameter Double DQN for the grid agents."""

from .dqn import DoubleDQN, NonFiniteLoss, double_dqn_target, greedy, mse_loss_and_grads, select_actions
from .network import DEFAULT_LAYERS, MLP, Adam
from .replay import ReplayBuffer
from .train import (LOG_COLUMNS, TrainConfig, TrainResult, config_hash, episode_seed, load_checkpoint,
                    save_checkpoint, train)

__all__ = [
    "DoubleDQN", "NonFiniteLoss", "double_dqn_target", "greedy", "mse_loss_and_grads", "select_actions",
    "DEFAULT_LAYERS", "MLP", "Adam", "ReplayBuffer", "LOG_COLUMNS", "TrainConfig", "TrainResult",
    "config_hash", "episode_seed", "load_checkpoint", "save_checkpoint", "train",
]
