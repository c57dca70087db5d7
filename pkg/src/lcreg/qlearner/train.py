"""Training loop for the grid agents and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..gridstate import normalize
from .dqn import DoubleDQN
from .network import DEFAULT_LAYERS, MLP
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("episode", "steps", "mean_reward", "mean_r1", "mean_r2", "epsilon", "loss")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    lr: float = 1e-4
    batch_size: int = 32
    target_period: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.4
    total_steps: int = 50_000
    buffer_capacity: int = 20_000
    learning_starts: int = 32
    checkpoint_every: int = 10_000
    layers: tuple = DEFAULT_LAYERS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        for name in ("eps_start", "eps_end", "eps_decay_frac"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.total_steps < 0 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("total_steps, batch_size and buffer_capacity must be valid counts")
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))

    def epsilon(self, step: int) -> float:
        decay = self.eps_decay_frac * self.total_steps
        if decay <= 0:
            return self.eps_end
        frac = min(step / decay, 1.0)
        return float(self.eps_start + (self.eps_end - self.eps_start) * frac)


def episode_seed(base: int, episode: int) -> int:
    return int(np.random.SeedSequence([base, episode]).generate_state(1)[0])


def config_hash(obj) -> str:
    """Short sha256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serialisable: {type(o)}")


def save_checkpoint(path, net: MLP, step: int, cfg_hash: str, extra: Optional[dict] = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "step": int(step), "config_hash": cfg_hash,
            "layers": list(net.layers), **(extra or {})}
    arrays = {f"p{k}": p for k, p in enumerate(net.params)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path, expect_hash: Optional[str] = None):
    """Returns (MLP, meta). Refuses a checkpoint whose config hash differs from ``expect_hash``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        if expect_hash is not None and meta["config_hash"] != expect_hash:
            raise ValueError(f"{path}: config hash {meta['config_hash']} does not match {expect_hash}")
        params = [data[f"p{k}"] for k in range(2 * (len(meta["layers"]) - 1))]
    net = MLP(meta["layers"], dtype=params[0].dtype)
    net.load(params)
    return net, meta


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # (step, path or None, params)
    faults: list = field(default_factory=list)
    agent: Optional[DoubleDQN] = None


def train(env_factory: Callable, cfg: TrainConfig, out_dir=None, cfg_hash: str = "",
          progress: Optional[Callable] = None) -> TrainResult:
    """Double DQN with parameter sharing across every grid agent.

    Args:
        env_factory: zero-argument callable returning a ``RegulationEnv``.
        cfg: hyperparameters.
        out_dir: where checkpoints go (``ckpt_<step>.npz``); None keeps them in memory only.
        cfg_hash: stamped into every checkpoint.
        progress: optional callback receiving each episode's log row.

    Returns:
        Per-episode log rows, checkpoints and discarded-episode faults.
    """
    env = env_factory()
    agent = DoubleDQN(cfg.layers, cfg.lr, cfg.gamma, cfg.target_period, cfg.seed)
    buf = ReplayBuffer(cfg.buffer_capacity, env.n_lanes, env.n_grids, seed=cfg.seed + 1)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    result = TrainResult(agent=agent)
    out = Path(out_dir) if out_dir is not None else None

    def checkpoint(step):
        path = None
        if out is not None:
            path = out / f"ckpt_{step:07d}.npz"
            save_checkpoint(path, agent.online, step, cfg_hash)
        result.checkpoints.append((step, path, [p.copy() for p in agent.online.params]))

    checkpoint(0)
    step = 0
    episode = 0
    w = env.weights
    t0 = time.time()
    while step < cfg.total_steps:
        env.reset(episode_seed(cfg.seed, episode))
        buf.mark()
        state = normalize(env.last_field, w.rho_max, w.v_max).astype(np.float32)
        obs = env.observe(env.last_field)
        rew_sum = r1_sum = r2_sum = 0.0
        losses = []
        n = 0
        while not env.done and step < cfg.total_steps:
            eps = cfg.epsilon(step)
            actions = agent.act(obs, eps, rng)
            obs, rew, done, info = env.step(actions)
            if info.fault is not None:
                break
            next_state = normalize(env.last_field, w.rho_max, w.v_max).astype(np.float32)
            # fixed-length episodes end by time limit, not by reaching a terminal state
            buf.add(state, actions, rew, next_state, False)
            state = next_state
            step += 1
            n += 1
            rew_sum += float(rew.mean())
            r1_sum += float(info.r1.mean())
            r2_sum += float(info.r2.mean())
            if len(buf) >= max(cfg.learning_starts, 1):
                losses.append(agent.train_step(buf, cfg.batch_size))
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint(step)
        if env.fault is not None:
            dropped = buf.rollback()
            step -= n
            log.warning("episode %d discarded after fault (%d transitions dropped): %s",
                        episode, dropped, env.fault.get("message"))
            result.faults.append({"episode": episode, **env.fault})
            episode += 1
            continue
        if n:
            row = {"episode": episode, "steps": step, "mean_reward": rew_sum / n, "mean_r1": r1_sum / n,
                   "mean_r2": r2_sum / n, "epsilon": cfg.epsilon(step),
                   "loss": float(np.mean(losses)) if losses else float("nan")}
            result.log.append(row)
            if progress:
                progress(row)
            log.info("episode %d steps %d reward %.4f eps %.3f (%.0fs)", episode, step, row["mean_reward"],
                     row["epsilon"], time.time() - t0)
        episode += 1
    if not result.checkpoints or result.checkpoints[-1][0] != step:
        checkpoint(step)
    return result
