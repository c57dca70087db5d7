"""Grid-level lane-change regulation as a multi-agent POMDP over the microscopic simulator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..gridstate import RHO_MAX, V_MAX, GridSpec, GridState, aggregate_arrays, observe_all
from ..roadsim import LaneChangeParams, SimulationFault, World
from .scenario import Scenario

log = logging.getLogger(__name__)

N_ACTIONS = 4


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.5
    w2: float = 0.5
    v_max: float = V_MAX
    rho_max: float = RHO_MAX

    def __post_init__(self):
        if abs(self.w1 + self.w2 - 1.0) > 1e-9 or self.w1 < 0 or self.w2 < 0:
            raise ValueError("reward weights must be non-negative and sum to 1")


def encode_actions(allow_left, allow_right) -> np.ndarray:
    """Joint action index 2*allow_left + allow_right."""
    return 2 * np.asarray(allow_left, dtype=np.int64) + np.asarray(allow_right, dtype=np.int64)


def decode_actions(index) -> np.ndarray:
    """(..., 2) uint8 permissions (allow_left, allow_right) from joint indices."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= N_ACTIONS):
        raise ValueError("joint action index must lie in 0..3")
    return np.stack([index // 2, index % 2], axis=-1).astype(np.uint8)


def _box_mean(values: np.ndarray) -> np.ndarray:
    """Mean over the clipped 3-lane x 5-grid box around every cell."""
    m, nx = values.shape
    pad = np.zeros((m + 2, nx + 4))
    pad[1:-1, 2:-2] = values
    ones = np.zeros((m + 2, nx + 4))
    ones[1:-1, 2:-2] = 1.0
    win = np.lib.stride_tricks.sliding_window_view
    s = win(pad, (3, 5)).sum(axis=(-1, -2))
    c = win(ones, (3, 5)).sum(axis=(-1, -2))
    return s / c


def reward_components(field: GridState, w: RewardWeights = RewardWeights()):
    """Per-agent speed index r1 and volume-to-capacity reward r2, each (lanes, grids)."""
    r1 = _box_mean(np.clip(field.v / w.v_max, 0.0, 1.0))
    r2 = _box_mean(np.clip(1.0 - field.rho / w.rho_max, 0.0, 1.0))
    return r1, r2


def reward_field(field: GridState, w: RewardWeights = RewardWeights()) -> np.ndarray:
    r1, r2 = reward_components(field, w)
    return w.w1 * r1 + w.w2 * r2


def reward(field: GridState, lane: int, grid: int, w: RewardWeights = RewardWeights()) -> float:
    """Reward of agent (lane, grid), both 1-based."""
    m, nx = field.rho.shape
    l0, g0 = lane - 1, grid - 1
    sl = slice(max(l0 - 1, 0), min(l0 + 2, m))
    sg = slice(max(g0 - 2, 0), min(g0 + 3, nx))
    r1 = np.mean(np.clip(field.v[sl, sg] / w.v_max, 0.0, 1.0))
    r2 = np.mean(np.clip(1.0 - field.rho[sl, sg] / w.rho_max, 0.0, 1.0))
    return float(w.w1 * r1 + w.w2 * r2)


@dataclass
class StepInfo:
    r1: np.ndarray
    r2: np.ndarray
    lane_changes: int
    fault: Optional[dict] = None


class RegulationEnv:
    """Per-grid agents gate CV lane changes; one env step holds the actions for ``env_step`` seconds.

    Args:
        scenario: road, demand, events and timescales.
        weights: reward weights and normalisers.
        lc: lane-change model parameters of the simulated drivers.
        record_trajectory: keep the per-step vehicle trajectory of the world.
    """

    def __init__(self, scenario: Scenario = None, weights: RewardWeights = RewardWeights(),
                 lc: LaneChangeParams = LaneChangeParams(), record_trajectory: bool = False):
        self.scenario = scenario or Scenario()
        self.weights = weights
        self.lc = lc
        self.record_trajectory = record_trajectory
        sc = self.scenario
        self.spec = GridSpec.for_road(sc.road.length, sc.road.lanes, sc.env.grid_length)
        self.n_lanes = sc.road.lanes
        self.n_grids = self.spec.n_grids
        self._sub = int(round(sc.env.reward_step / sc.road.sim_step))
        self._samples = int(round(sc.env.env_step / sc.env.reward_step))
        self.world: Optional[World] = None
        self.steps = 0
        self.done = True
        self.action_log: list = []
        self.reward_log: list = []
        self.fault: Optional[dict] = None
        self.seed: Optional[int] = None

    @property
    def n_agents(self) -> int:
        return self.n_lanes * self.n_grids

    def field(self) -> GridState:
        lane, x, v, cv = self.world.state_arrays()
        return aggregate_arrays(lane, x, v, cv, self.spec, self.weights.v_max)

    def observe(self, field: Optional[GridState] = None) -> np.ndarray:
        field = self.field() if field is None else field
        return observe_all(field, self.weights.rho_max, self.weights.v_max)

    def reset(self, seed: int) -> np.ndarray:
        """Fresh world with this seed; the warm-up runs with every lane change allowed.

        Returns:
            Observation field (lanes, grids, 75).
        """
        sc = self.scenario
        self.seed = int(seed)
        self.world = World(sc.road, sc.demand_config(seed), events=[], lc=self.lc,
                           grid_length=sc.env.grid_length, warmup=sc.env.warmup,
                           record_trajectory=self.record_trajectory)
        # events are drawn from the world's event stream so both arms of a paired run see the same draw
        self.world.events = sc.draw_events(self.world.event_rng)
        for ev in self.world.events:
            ev.validate_for(sc.road)
        self.steps = 0
        self.done = sc.env.episode_length == 0
        self.action_log = []
        self.reward_log = []
        self.fault = None
        try:
            self.world.run(sc.env.warmup)
        except SimulationFault as exc:
            self.fault = {"message": str(exc), **exc.diagnostics}
            self.done = True
        self.last_field = self.field()
        return self.observe(self.last_field)

    def step(self, actions):
        """Apply the joint actions (lanes, grids) or permissions (lanes, grids, 2).

        Returns:
            (observation field, reward field, done, StepInfo)
        """
        if self.world is None or self.done:
            raise RuntimeError("call reset() before step() (episode finished)")
        actions = np.asarray(actions)
        if actions.shape == (self.n_lanes, self.n_grids):
            perm = decode_actions(actions)
        elif actions.shape == (self.n_lanes, self.n_grids, 2):
            perm = np.ascontiguousarray(actions, dtype=np.uint8)
        else:
            raise ValueError(f"actions must have shape ({self.n_lanes}, {self.n_grids}[, 2]), got {actions.shape}")
        self.action_log.append(perm.copy())
        r1 = np.zeros((self.n_lanes, self.n_grids))
        r2 = np.zeros_like(r1)
        n_lc = 0
        taken = 0
        fault = None
        try:
            for _ in range(self._samples):
                for _ in range(self._sub):
                    n_lc += self.world.step(perm)
                field = self.field()
                a, b = reward_components(field, self.weights)
                r1 += a
                r2 += b
                taken += 1
                self.last_field = field
        except SimulationFault as exc:
            fault = {"message": str(exc), **exc.diagnostics}
            log.warning("episode aborted: %s", exc)
        if taken:
            r1 /= taken
            r2 /= taken
        rew = self.weights.w1 * r1 + self.weights.w2 * r2
        self.steps += 1
        self.fault = fault
        self.done = fault is not None or self.steps >= self.scenario.env.episode_length
        self.reward_log.append(rew)
        return self.observe(self.last_field), rew, self.done, StepInfo(r1, r2, n_lc, fault)

    def write_episode_csv(self, path) -> None:
        """Rows (env_step, lane, grid, action_left, action_right, reward); lanes and grids 1-based."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["env_step", "lane", "grid", "action_left", "action_right", "reward"])
            for k, (perm, rew) in enumerate(zip(self.action_log, self.reward_log)):
                for l in range(self.n_lanes):
                    for g in range(self.n_grids):
                        w.writerow([k, l + 1, g + 1, int(perm[l, g, 0]), int(perm[l, g, 1]), repr(float(rew[l, g]))])
