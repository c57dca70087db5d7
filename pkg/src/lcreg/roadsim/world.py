"""The simulated freeway: vehicle table, demand, events and the step loop."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernel as K
from .idm import equilibrium_gap
from .lanechange import speed_table
from .params import (ConfigError, DemandConfig, EmissionParams, IdmParams, LaneChangeParams,
                     RoadConfig, ScenarioEvent)

log = logging.getLogger(__name__)


class SimulationFault(RuntimeError):
    """A hard invariant (no overlap, finite state) was violated."""

    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass
class Vehicle:
    """Snapshot of one vehicle; lanes are 1-based (1 = rightmost)."""

    id: int
    lane: int
    x: float
    v: float
    accel: float = 0.0
    is_cv: bool = False
    idm: IdmParams = field(default_factory=IdmParams)
    effective_time_gap: float = 1.4
    lc_state: Optional[tuple] = None  # (direction, elapsed seconds) while changing
    spawn_time: float = 0.0
    cumulative_co2: float = 0.0
    cumulative_ttc_exposure: float = 0.0


@dataclass
class LaneChangeEvent:
    """An executed lane change; lanes and the origin grid are 1-based."""

    t: float
    vehicle_id: int
    from_lane: int
    to_lane: int
    grid: int
    is_cv: bool

    @property
    def direction(self) -> str:
        return "left" if self.to_lane > self.from_lane else "right"


def spawn_probability(per_lane_inflow: float, sim_step: float) -> float:
    """Per-step Bernoulli probability; ten sub-draws per second give Binomial(10, q/36000)."""
    return per_lane_inflow * sim_step / 3600.0


def free_flow_speed_for_inflow(inflow: float, p: IdmParams) -> float:
    """Free-branch equilibrium speed carrying ``inflow`` veh/h (bisection on q(v))."""
    if inflow <= 0:
        return p.desired_speed
    q = lambda v: 3600.0 * v / (equilibrium_gap(v, p.desired_speed, p.time_gap, p.min_gap,
                                                p.accel_exponent) + p.vehicle_length)
    vs = np.linspace(0.0, p.desired_speed * (1 - 1e-9), 20001)
    qs = np.array([q(v) for v in vs])
    k_cap = int(np.argmax(qs))
    if inflow >= qs[k_cap]:
        return float(vs[k_cap])
    lo, hi = vs[k_cap], vs[-1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if q(mid) > inflow:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


class World:
    """One isolated simulation: owns its vehicle table and RNG streams.

    Args:
        road: road geometry and step size.
        demand: inflow, CV penetration and seed.
        events: safety-critical events (validated against the road).
        grid_length: regulation-grid length used for gating and intent logs.
        warmup: metrics (CO2, TTC, distance, lane-change counts, intents) accumulate from here on.
        record_trajectory: keep a per-step trajectory table (slow, for export and tests).
    """

    def __init__(self, road: RoadConfig = RoadConfig(), demand: DemandConfig = DemandConfig(),
                 events: Optional[list] = None, idm: IdmParams = IdmParams(),
                 lc: LaneChangeParams = LaneChangeParams(), emission: EmissionParams = EmissionParams(),
                 grid_length: float = 100.0, warmup: float = 0.0, ttc_threshold: float = 5.0,
                 record_trajectory: bool = False):
        n_grids = road.length / grid_length
        if abs(n_grids - round(n_grids)) > 1e-9:
            raise ConfigError("grid_length must divide the road length")
        self.road, self.demand, self.idm, self.lc, self.emission = road, demand, idm, lc, emission
        self.events = list(events or [])
        for ev in self.events:
            ev.validate_for(road)
        self.grid_length = grid_length
        self.n_grids = int(round(n_grids))
        self.warmup = warmup
        self.ttc_threshold = ttc_threshold

        seeds = np.random.SeedSequence(demand.seed).spawn(2)
        self._demand_rng = np.random.default_rng(seeds[0])
        self.event_rng = np.random.default_rng(seeds[1])
        self.spawn_speed = (demand.spawn_speed if demand.spawn_speed is not None
                            else free_flow_speed_for_inflow(demand.per_lane_inflow, idm))
        self._p_arrival = spawn_probability(demand.per_lane_inflow, road.sim_step)

        m = road.lanes
        cap = 64
        self.F = np.zeros((cap, K.NF))
        self.I = np.zeros((cap, K.NI), dtype=np.int64)
        self.n = 0
        self._occ = np.zeros((m, 2 * cap), dtype=np.int64)
        self._occ_n = np.zeros(m, dtype=np.int64)
        self._ev_buf = np.zeros((cap, 5), dtype=np.int64)
        self._tail_x = np.zeros(m)
        self._tail_v = np.zeros(m)
        self.hazard = np.zeros((m, self.n_grids), dtype=np.bool_)
        self._all_allow = np.ones((m, self.n_grids, 2), dtype=np.uint8)
        self.intent_counts = np.zeros((m, self.n_grids, 2))
        self.presence_counts = np.zeros((m, self.n_grids))

        self._idm_arr = idm.as_array()
        self._lc_arr = lc.as_array()
        self._em_arr = emission.as_array()
        self._ve_tab = speed_table(idm, lc.lookahead)
        self._rd_arr = np.array([road.length, m, road.sim_step, road.lc_steps, road.lateral_speed,
                                 road.lane_width, road.lateral_resolution, grid_length, self.n_grids,
                                 ttc_threshold])

        self.queues = [deque() for _ in range(m)]
        self.t = 0.0
        self.step_count = 0
        self.next_id = 0
        self.spawned = 0
        self.despawned = 0
        self.max_queue = 0
        self.lane_changes: list[LaneChangeEvent] = []
        self.finished: list[tuple] = []  # (despawn_time, F row, I row)
        self.record_trajectory = record_trajectory
        self.trajectory: list[tuple] = []

    # ------------------------------------------------------------------ table helpers
    def _grow(self):
        cap = 2 * self.F.shape[0]
        F = np.zeros((cap, K.NF))
        I = np.zeros((cap, K.NI), dtype=np.int64)
        F[: self.n] = self.F[: self.n]
        I[: self.n] = self.I[: self.n]
        self.F, self.I = F, I
        self._occ = np.zeros((self.road.lanes, 2 * cap), dtype=np.int64)
        self._ev_buf = np.zeros((cap, 5), dtype=np.int64)

    def add_vehicle(self, lane: int, x: float, v: float, is_cv: bool = False) -> int:
        """Insert a vehicle directly (lane is 1-based). Returns its id."""
        if not 1 <= lane <= self.road.lanes:
            raise ConfigError(f"lane {lane} outside 1..{self.road.lanes}")
        if self.n >= self.F.shape[0]:
            self._grow()
        k = self.n
        self.F[k] = 0.0
        self.I[k] = 0
        self.F[k, K.X] = x
        self.F[k, K.V] = v
        self.F[k, K.EFF_T] = self.idm.time_gap
        self.F[k, K.SPAWN_T] = self.t
        self.F[k, K.COOL_UNTIL] = -np.inf
        self.I[k, K.ID] = self.next_id
        self.I[k, K.LANE] = lane - 1
        self.I[k, K.LC_FROM] = -1
        self.I[k, K.LC_TO] = -1
        self.I[k, K.IS_CV] = int(bool(is_cv))
        self.next_id += 1
        self.n += 1
        self.spawned += 1
        return int(self.I[k, K.ID])

    def row_of(self, vehicle_id: int) -> int:
        rows = np.nonzero(self.I[: self.n, K.ID] == vehicle_id)[0]
        return int(rows[0]) if len(rows) else -1

    @property
    def population(self) -> int:
        return self.n

    @property
    def in_window(self) -> bool:
        return self.t >= self.warmup - 1e-9

    def vehicles(self) -> list[Vehicle]:
        out = []
        dt = self.road.sim_step
        for k in range(self.n):
            F, I = self.F[k], self.I[k]
            lc_state = None
            if I[K.LC_TO] >= 0:
                direction = "left" if I[K.LC_TO] > I[K.LC_FROM] else "right"
                lc_state = (direction, I[K.LC_STEPS] * dt)
            out.append(Vehicle(id=int(I[K.ID]), lane=int(I[K.LANE]) + 1, x=float(F[K.X]), v=float(F[K.V]),
                               accel=float(F[K.ACC]), is_cv=bool(I[K.IS_CV]), idm=self.idm,
                               effective_time_gap=float(F[K.EFF_T]), lc_state=lc_state,
                               spawn_time=float(F[K.SPAWN_T]), cumulative_co2=float(F[K.CO2]),
                               cumulative_ttc_exposure=float(I[K.TTC_STEPS] * dt)))
        return out

    def state_arrays(self):
        """(lane 1-based, x, v, is_cv) arrays of the vehicles on the road."""
        n = self.n
        return (self.I[:n, K.LANE] + 1, self.F[:n, K.X].copy(), self.F[:n, K.V].copy(),
                self.I[:n, K.IS_CV].astype(bool))

    # ------------------------------------------------------------------ demand
    def _spawn(self) -> list:
        m = self.road.lanes
        new_ids = []
        draws = self._demand_rng.random((2, m))
        arrivals = draws[0] < self._p_arrival
        for l in range(m):
            if arrivals[l]:
                self.queues[l].append(bool(draws[1, l] < self.demand.cv_rate))
        if not any(self.queues):
            return new_ids
        K.lane_tails(self.n, self.F, self.I, m, self._tail_x, self._tail_v)
        p = self.idm
        vs = self.spawn_speed
        for l in range(m):
            q = self.queues[l]
            if not q:
                continue
            if math.isfinite(self._tail_x[l]):
                gap = self._tail_x[l] - p.vehicle_length
                dv = vs - self._tail_v[l]
                s_star = p.min_gap + vs * p.time_gap + vs * dv / (2 * math.sqrt(p.max_accel * p.comfort_decel))
                if gap < p.min_gap or gap < s_star:
                    continue
            new_ids.append(self.add_vehicle(l + 1, 0.0, vs, q.popleft()))
        qmax = max(len(q) for q in self.queues)
        if qmax > self.max_queue:
            self.max_queue = qmax
            if qmax >= 5 and qmax % 5 == 0:
                log.info("entrance queue reached %d vehicles at t=%.1f s", qmax, self.t)
        return new_ids

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues)

    # ------------------------------------------------------------------ events
    def apply_events(self):
        n = self.n
        self.F[:n, K.EFF_T] = self.idm.time_gap
        self.hazard[:] = False
        for ev in self.events:
            apply_event(ev, self, self.t)

    # ------------------------------------------------------------------ stepping
    def step(self, permitted: Optional[np.ndarray] = None) -> int:
        """Advance one simulation step under the per-grid permission field.

        Args:
            permitted: uint8 array (lanes, n_grids, 2) of (allow_left, allow_right);
                ``None`` means everything is allowed.

        Returns:
            Number of lane changes executed during the step.
        """
        perm = self._all_allow if permitted is None else permitted
        self.apply_events()
        self._spawn()
        if self._occ.shape[1] < 2 * self.n:
            self._occ = np.zeros((self.road.lanes, 2 * self.F.shape[0]), dtype=np.int64)
        if self._ev_buf.shape[0] < self.n:
            self._ev_buf = np.zeros((self.F.shape[0], 5), dtype=np.int64)
        in_window = self.in_window
        n_ev, fault, row = K.step_kernel(self.n, self.F, self.I, perm, self.hazard, self._idm_arr,
                                         self._lc_arr, self._em_arr, self._rd_arr, self._ve_tab, self.t, in_window,
                                         self._ev_buf, self.intent_counts, self.presence_counts,
                                         self._occ, self._occ_n)
        if fault != K.FAULT_NONE:
            raise SimulationFault(
                f"invariant violation ({'overlap' if fault == K.FAULT_OVERLAP else 'non-finite state'}) "
                f"at t={self.t:.1f}s", self._diagnostics(row))
        t_new = self.t + self.road.sim_step
        for e in range(n_ev):
            k, lf, lt, g, cv = self._ev_buf[e]
            self.lane_changes.append(LaneChangeEvent(t_new, int(self.I[k, K.ID]), int(lf) + 1,
                                                     int(lt) + 1, int(g) + 1, bool(cv)))
        self.t = t_new
        self.step_count += 1
        if self.record_trajectory:
            self._record()
        self._despawn()
        return n_ev

    def run(self, seconds: float, permitted: Optional[np.ndarray] = None) -> None:
        for _ in range(int(round(seconds / self.road.sim_step))):
            self.step(permitted)

    def _despawn(self):
        n = self.n
        out = self.F[:n, K.X] > self.road.length
        if not out.any():
            return
        for k in np.nonzero(out)[0]:
            self.finished.append((self.t, self.F[k].copy(), self.I[k].copy()))
        keep = ~out
        m = int(keep.sum())
        self.F[:m] = self.F[:n][keep]
        self.I[:m] = self.I[:n][keep]
        self.n = m
        self.despawned += n - m
        for ev in self.events:
            if ev.kind == "vehicle_stop" and ev.vehicle_id >= 0 and self.row_of(ev.vehicle_id) < 0:
                ev.vehicle_id = -2  # left the road

    def _record(self):
        n = self.n
        I, F = self.I, self.F
        for k in range(n):
            state = "none"
            if I[k, K.LC_TO] >= 0:
                state = "left" if I[k, K.LC_TO] > I[k, K.LC_FROM] else "right"
            self.trajectory.append((round(self.t, 6), int(I[k, K.ID]), int(I[k, K.LANE]) + 1, float(F[k, K.X]),
                                    float(F[k, K.V]), float(F[k, K.ACC]), bool(I[k, K.IS_CV]), state))

    def _diagnostics(self, row: int) -> dict:
        diag = {"t": self.t, "population": self.n}
        if 0 <= row < self.n:
            diag["vehicle"] = {"id": int(self.I[row, K.ID]), "lane": int(self.I[row, K.LANE]) + 1,
                               "x": float(self.F[row, K.X]), "v": float(self.F[row, K.V])}
        return diag

    # ------------------------------------------------------------------ summaries
    def vehicle_summary(self) -> dict:
        """Per-vehicle metric accumulators for finished and on-road vehicles.

        Only quantities accrued at t >= warmup are included.
        """
        rows_F = [f for _, f, _ in self.finished] + [self.F[k] for k in range(self.n)]
        rows_I = [i for _, _, i in self.finished] + [self.I[k] for k in range(self.n)]
        despawn = [t for t, _, _ in self.finished] + [np.nan] * self.n
        if rows_F:
            F = np.array(rows_F)
            I = np.array(rows_I)
        else:
            F = np.zeros((0, K.NF))
            I = np.zeros((0, K.NI), dtype=np.int64)
        despawn = np.array(despawn, dtype=float)
        return {
            "id": I[:, K.ID],
            "is_cv": I[:, K.IS_CV].astype(bool),
            "spawn_time": F[:, K.SPAWN_T],
            "despawn_time": despawn,
            "finished_in_window": np.isfinite(despawn) & (despawn >= self.warmup),
            "window_steps": I[:, K.WIN_STEPS],
            "ttc_steps": I[:, K.TTC_STEPS],
            "co2": F[:, K.CO2],
            "distance": F[:, K.DIST],
            "lane_changes": I[:, K.LC_COUNT],
            "sim_step": self.road.sim_step,
        }


def spawn_demand(world: World) -> list[Vehicle]:
    """Draw this step's arrivals and insert whatever the entrance has room for.

    Arrivals that find the entrance blocked wait in a per-lane queue.
    """
    ids = set(world._spawn())
    return [veh for veh in world.vehicles() if veh.id in ids]


def apply_event(event: ScenarioEvent, world: World, t: float) -> None:
    """Impose one safety-critical event on the world at time ``t`` (no-op outside its window)."""
    if not event.active(t):
        return
    n = world.n
    F, I = world.F, world.I
    lane0 = event.lane - 1
    x0, x1 = event.x_range
    if event.kind == "lane_degrade":
        inside = (I[:n, K.LANE] == lane0) & (F[:n, K.X] >= x0) & (F[:n, K.X] <= x1)
        F[:n, K.EFF_T][inside] = event.degrade_time_gap
        g0 = int(math.floor(x0 / world.grid_length))
        g1 = int(math.ceil(x1 / world.grid_length))
        world.hazard[lane0, max(g0, 0): min(g1, world.n_grids)] = True
        return
    # vehicle_stop: pick the most downstream eligible vehicle once, inside the trigger window
    if event.vehicle_id != -1:
        return
    cand = ((I[:n, K.LANE] == lane0) & (I[:n, K.LC_TO] < 0)
            & (F[:n, K.X] >= x0) & (F[:n, K.X] <= x1))
    if not cand.any():
        return
    rows = np.nonzero(cand)[0]
    k = rows[np.argmax(F[rows, K.X])]
    event.vehicle_id = int(I[k, K.ID])
    I[k, K.STOP_PHASE] = 1
    F[k, K.STOP_DECEL] = event.stop_decel
    F[k, K.STOP_HOLD] = event.stop_hold
