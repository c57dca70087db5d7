"""Shared-parameter Double DQN over grid agents."""

from __future__ import annotations

import numpy as np

from ..env.regulation import N_ACTIONS
from ..gridstate import OBS_SIZE, observation_windows
from .network import DEFAULT_LAYERS, MLP, Adam


class NonFiniteLoss(FloatingPointError):
    def __init__(self, msg: str, dump: dict):
        super().__init__(msg)
        self.dump = dump


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest action index."""
    return np.argmax(q, axis=-1)


def select_actions(net: MLP, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Epsilon-greedy joint actions for every agent of an observation field.

    Args:
        obs: (..., OBS_SIZE) observations; leading axes index agents.
        epsilon: exploration probability per agent.

    Returns:
        Integer actions of shape ``obs.shape[:-1]``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    lead = obs.shape[:-1]
    flat = obs.reshape(-1, obs.shape[-1])
    act = greedy(net(flat))
    explore = rng.random(act.shape[0]) < epsilon
    random_act = rng.integers(0, N_ACTIONS, act.shape[0])
    return np.where(explore, random_act, act).reshape(lead)


def double_dqn_target(online: MLP, target: MLP, reward, next_obs, done, gamma: float) -> np.ndarray:
    """y = r + gamma * Q_target(s', argmax_a Q_online(s', a)); terminal rows use y = r."""
    reward = np.asarray(reward, dtype=np.float64)
    a_star = greedy(online(next_obs))
    q_next = target(next_obs)[np.arange(len(a_star)), a_star]
    not_done = 1.0 - np.asarray(done, dtype=np.float64)
    return reward + gamma * not_done * q_next


def mse_loss_and_grads(net: MLP, obs, actions, y):
    """Mean of (y - Q(o, a))^2 and its gradients."""
    q, cache = net.forward(obs, keep=True)
    idx = np.arange(len(actions))
    err = q[idx, actions] - np.asarray(y, dtype=q.dtype)
    loss = float(np.mean(err.astype(np.float64) ** 2))
    dq = np.zeros_like(q)
    dq[idx, actions] = 2.0 * err / len(actions)
    return loss, net.backward(cache, dq)


class DoubleDQN:
    """Online and target networks plus the optimiser, shared by every grid agent.

    Args:
        layers: MLP widths.
        lr: Adam learning rate.
        gamma: discount factor.
        target_period: train steps between hard target copies.
        seed: initialisation seed.
    """

    def __init__(self, layers=DEFAULT_LAYERS, lr: float = 1e-4, gamma: float = 0.95,
                 target_period: int = 1000, seed: int = 0, dtype=np.float32):
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.online = MLP(layers, np.random.default_rng(seed), dtype)
        self.target = self.online.copy()
        self.opt = Adam(self.online.params, lr)
        self.gamma = gamma
        self.target_period = int(target_period)
        self.train_steps = 0
        self.last_sync = 0

    def act(self, obs, epsilon: float, rng) -> np.ndarray:
        return select_actions(self.online, obs, epsilon, rng)

    def sync_target(self, force: bool = False) -> bool:
        """Hard copy online -> target when the train-step counter hits the period."""
        if force or (self.target_period > 0 and self.train_steps % self.target_period == 0):
            self.target.load(self.online.params)
            self.last_sync = self.train_steps
            return True
        return False

    def update(self, obs, actions, rewards, next_obs, done) -> float:
        """One gradient step on a flat batch of per-agent tuples."""
        y = double_dqn_target(self.online, self.target, rewards, next_obs, done, self.gamma)
        loss, grads = mse_loss_and_grads(self.online, obs, actions, y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteLoss(f"non-finite loss at train step {self.train_steps}",
                                {"params": [p.copy() for p in self.online.params], "obs": obs,
                                 "actions": actions, "y": y})
        self.opt.step(self.online.params, grads)
        self.train_steps += 1
        self.sync_target()
        return loss

    def train_step(self, buffer, batch_size: int) -> float:
        """Sample global transitions, flatten to per-agent tuples, take one gradient step."""
        state, action, reward, next_state, done = buffer.sample(batch_size)
        obs = _windows(state)
        nobs = _windows(next_state)
        n_agents = state.shape[1] * state.shape[2]
        return self.update(obs, action.reshape(-1).astype(np.int64), reward.reshape(-1),
                           nobs, np.repeat(done, n_agents))


def _windows(norm_fields: np.ndarray) -> np.ndarray:
    """Flattened (B*agents, OBS_SIZE) observations of a batch of normalised fields."""
    return observation_windows(norm_fields).reshape(-1, OBS_SIZE)
