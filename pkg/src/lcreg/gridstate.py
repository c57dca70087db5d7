"""Lane-grid aggregation of vehicle states and per-agent observation windows.

Grid ``i`` (0-based internally) covers ``[i*dx, (i+1)*dx)``, i.e. the half-open
interval of width ``dx`` centred on ``x_i = (i + 1/2) dx``. Public lane and grid
indices are 1-based; field arrays are indexed ``[lane-1, grid-1]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

RHO_MAX = 0.133  # veh/(lane m)
V_MAX = 24.59  # m/s
FEATURES = ("rho", "rho_c", "v", "v_c")
WINDOW_LANES = 3
WINDOW_GRIDS = 5
OBS_SIZE = WINDOW_LANES * WINDOW_GRIDS * (len(FEATURES) + 1)


@dataclass(frozen=True)
class GridSpec:
    grid_length: float = 100.0
    n_grids: int = 10
    n_lanes: int = 5

    def __post_init__(self):
        if self.grid_length <= 0 or self.n_grids < 1 or self.n_lanes < 1:
            raise ValueError(f"invalid grid spec {self}")

    @property
    def road_length(self) -> float:
        return self.grid_length * self.n_grids

    @classmethod
    def for_road(cls, length: float, lanes: int, grid_length: float = 100.0) -> "GridSpec":
        n = length / grid_length
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"grid length {grid_length} does not divide road length {length}")
        return cls(grid_length, int(round(n)), lanes)

    def grid_index(self, x) -> np.ndarray:
        """0-based grid of each position; x = L is folded into the last grid."""
        g = np.floor(np.asarray(x, dtype=float) / self.grid_length).astype(np.int64)
        return np.clip(g, 0, self.n_grids - 1)


@dataclass
class GridState:
    """Per-grid aggregates, each an (n_lanes, n_grids) array."""

    rho: np.ndarray
    rho_c: np.ndarray
    v: np.ndarray
    v_c: np.ndarray

    def as_array(self) -> np.ndarray:
        """Stack into (n_lanes, n_grids, 4) in ``FEATURES`` order."""
        return np.stack([self.rho, self.rho_c, self.v, self.v_c], axis=-1)

    @classmethod
    def from_array(cls, arr) -> "GridState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[..., 0].copy(), arr[..., 1].copy(), arr[..., 2].copy(), arr[..., 3].copy())

    @classmethod
    def uniform(cls, spec: GridSpec, rho: float, v: float, rho_c: Optional[float] = None,
                v_c: Optional[float] = None) -> "GridState":
        shape = (spec.n_lanes, spec.n_grids)
        rho_c = rho if rho_c is None else rho_c
        v_c = v if v_c is None else v_c
        return cls(np.full(shape, rho), np.full(shape, rho_c), np.full(shape, v), np.full(shape, v_c))


def aggregate_arrays(lane, x, v, is_cv, spec: GridSpec, v_max: float = V_MAX) -> GridState:
    """Aggregate raw vehicle arrays (lane 1-based) onto the grid.

    Each vehicle counts in exactly one grid: its current lane index and the
    grid containing its position. Empty grids report ``v = v_max``.
    """
    lane = np.asarray(lane, dtype=np.int64) - 1
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    cv = np.asarray(is_cv, dtype=bool)
    n_cells = spec.n_lanes * spec.n_grids
    cell = lane * spec.n_grids + spec.grid_index(x)
    if cell.size and (lane.min() < 0 or lane.max() >= spec.n_lanes):
        raise ValueError("vehicle lane outside the grid spec")
    count = np.bincount(cell, minlength=n_cells).astype(float)
    vsum = np.bincount(cell, weights=v, minlength=n_cells)
    count_c = np.bincount(cell[cv], minlength=n_cells).astype(float)
    vsum_c = np.bincount(cell[cv], weights=v[cv], minlength=n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        vbar = np.where(count > 0, vsum / count, v_max)
        vbar_c = np.where(count_c > 0, vsum_c / count_c, v_max)
    shape = (spec.n_lanes, spec.n_grids)
    return GridState((count / spec.grid_length).reshape(shape), (count_c / spec.grid_length).reshape(shape),
                     vbar.reshape(shape), vbar_c.reshape(shape))


def aggregate(vehicles: Iterable, spec: GridSpec, v_max: float = V_MAX) -> GridState:
    """Aggregate a sequence of vehicles (anything with lane/x/v/is_cv attributes)."""
    vehicles = list(vehicles)
    return aggregate_arrays([veh.lane for veh in vehicles], [veh.x for veh in vehicles],
                            [veh.v for veh in vehicles], [veh.is_cv for veh in vehicles], spec, v_max)


def normalize(field: GridState, rho_max: float = RHO_MAX, v_max: float = V_MAX) -> np.ndarray:
    """Scaled (n_lanes, n_grids, 4) feature array clipped to [0, 1]."""
    arr = field.as_array() / np.array([rho_max, rho_max, v_max, v_max])
    return np.clip(arr, 0.0, 1.0)


def observation_windows(norm: np.ndarray) -> np.ndarray:
    """Observation windows of normalised feature fields.

    Args:
        norm: (..., n_lanes, n_grids, 4) features already scaled to [0, 1].

    Returns:
        (..., n_lanes, n_grids, OBS_SIZE). The window spans lanes (alpha-1,
        alpha, alpha+1) and grids i-2..i+2; the first 60 entries are features in
        (lane, grid, feature) order, the last 15 the mask, 1 where the window
        leaves the road.
    """
    norm = np.asarray(norm)
    lead = norm.shape[:-3]
    m, nx, nf = norm.shape[-3:]
    pad = np.zeros(lead + (m + 2, nx + 4, nf), dtype=norm.dtype)
    pad[..., 1:-1, 2:-2, :] = norm
    mask = np.ones((m + 2, nx + 4), dtype=norm.dtype)
    mask[1:-1, 2:-2] = 0
    ax = (len(lead), len(lead) + 1)
    win_f = np.lib.stride_tricks.sliding_window_view(pad, (WINDOW_LANES, WINDOW_GRIDS), axis=ax)
    # (..., m, nx, nf, 3, 5) -> (..., m, nx, 3, 5, nf)
    feats = np.moveaxis(win_f, -3, -1).reshape(lead + (m, nx, -1))
    win_m = np.lib.stride_tricks.sliding_window_view(mask, (WINDOW_LANES, WINDOW_GRIDS)).reshape(m, nx, -1)
    return np.concatenate([feats, np.broadcast_to(win_m, lead + win_m.shape)], axis=-1)


def observe_all(field: GridState, rho_max: float = RHO_MAX, v_max: float = V_MAX) -> np.ndarray:
    """Observation of every agent, shape (n_lanes, n_grids, OBS_SIZE)."""
    return observation_windows(normalize(field, rho_max, v_max))


def observe(field: GridState, lane: int, grid: int, rho_max: float = RHO_MAX,
            v_max: float = V_MAX) -> np.ndarray:
    """Observation vector (length ``OBS_SIZE``) of agent (lane, grid), both 1-based."""
    m, nx = field.rho.shape
    if not (1 <= lane <= m and 1 <= grid <= nx):
        raise IndexError(f"agent ({lane}, {grid}) outside {m} lanes x {nx} grids")
    feats = normalize(field, rho_max, v_max)
    out_f = np.zeros((WINDOW_LANES, WINDOW_GRIDS, len(FEATURES)))
    mask = np.ones((WINDOW_LANES, WINDOW_GRIDS))
    for a in range(WINDOW_LANES):
        for b in range(WINDOW_GRIDS):
            l, g = lane - 2 + a, grid - 3 + b
            if 0 <= l < m and 0 <= g < nx:
                out_f[a, b] = feats[l, g]
                mask[a, b] = 0.0
    return np.concatenate([out_f.reshape(-1), mask.reshape(-1)])


def write_grid_csv(path, snapshots: Iterable[tuple]) -> None:
    """Write ``(t, GridState)`` snapshots as rows (t, lane, grid, rho, rho_c, v, v_c)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lane", "grid"] + list(FEATURES))
        for t, field in snapshots:
            arr = field.as_array()
            for l in range(arr.shape[0]):
                for g in range(arr.shape[1]):
                    w.writerow([f"{t:g}", l + 1, g + 1] + [repr(float(val)) for val in arr[l, g]])


def read_grid_csv(path) -> list[tuple]:
    """Inverse of ``write_grid_csv``."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(float(r["t"]), []).append(r)
    out = []
    for t, rs in rows.items():
        m = max(int(r["lane"]) for r in rs)
        nx = max(int(r["grid"]) for r in rs)
        arr = np.zeros((m, nx, len(FEATURES)))
        for r in rs:
            arr[int(r["lane"]) - 1, int(r["grid"]) - 1] = [float(r[f]) for f in FEATURES]
        out.append((t, GridState.from_array(arr)))
    return out
