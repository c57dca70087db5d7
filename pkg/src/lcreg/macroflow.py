"""Finite-volume solver for multi-lane second-order (ARZ-type) traffic with lane-change exchange.

Each lane carries density ``rho`` and speed ``v``. The homogeneous part is the
ARZ system in conserved variables ``(rho, rho*w)`` with ``w = v + p(rho)`` and
pressure ``p(rho) = v_max - V_e(rho)``, advanced with an HLL flux. Lane-change
exchange and relaxation towards ``V_e`` are integrated in a split step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .roadsim.idm import equilibrium_speed, jam_density
from .roadsim.params import IdmParams

BOUNDARIES = ("closed", "periodic", "open")


class CflError(ValueError):
    """The requested step violates the CFL bound."""

    def __init__(self, dt: float, admissible: float):
        super().__init__(f"dt={dt:g} s violates the CFL bound; admissible dt <= {admissible:.6g} s")
        self.dt = dt
        self.admissible = admissible


@dataclass(frozen=True)
class PdeParams:
    """Closure of the macroscopic model.

    Args:
        idm: car-following parameters whose equilibrium curve defines V_e.
        v_max: free-flow speed; also the pressure offset.
        relax_time: relaxation time of v towards V_e(rho).
        cfl: Courant number bound (at most 0.9).
        boundary: ``closed`` (walls), ``periodic`` or ``open`` (zero-gradient).
    """

    idm: IdmParams = IdmParams()
    v_max: float = 24.59
    relax_time: float = 10.0
    cfl: float = 0.9
    boundary: str = "closed"
    n_table: int = 4001

    def __post_init__(self):
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl must lie in (0, 0.9]")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.relax_time <= 0 or self.v_max <= 0:
            raise ValueError("relax_time and v_max must be positive")

    @cached_property
    def _table(self):
        rho = np.linspace(0.0, jam_density(self.idm), self.n_table)
        ve = np.minimum(equilibrium_speed(rho, self.idm), self.v_max)
        dp = -np.gradient(ve, rho)
        return rho, ve, np.maximum(dp, 0.0)

    def ve(self, rho):
        r, ve, _ = self._table
        return np.interp(rho, r, ve, right=0.0)

    def pressure(self, rho):
        return self.v_max - self.ve(rho)

    def dpressure(self, rho):
        r, _, dp = self._table
        return np.interp(rho, r, dp, right=0.0)

    def max_wave_speed(self) -> float:
        """Bound on |lambda| over admissible states: max(v_max, sup rho p'(rho))."""
        r, _, dp = self._table
        return float(max(self.v_max, np.max(r * dp)))


@dataclass
class MacroField:
    """Per-lane density (veh/m) and speed (m/s) on cells of width ``dx``."""

    rho: np.ndarray
    v: np.ndarray
    dx: float

    def __post_init__(self):
        self.rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.rho.shape != self.v.shape:
            raise ValueError("rho and v must have the same shape")

    @property
    def n_lanes(self) -> int:
        return self.rho.shape[0]

    @property
    def n_cells(self) -> int:
        return self.rho.shape[1]

    def total_mass(self) -> float:
        return math.fsum(self.rho.ravel()) * self.dx

    def copy(self) -> "MacroField":
        return MacroField(self.rho.copy(), self.v.copy(), self.dx)

    @classmethod
    def equilibrium(cls, rho, dx: float, params: PdeParams = PdeParams()) -> "MacroField":
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        return cls(rho, params.ve(rho), dx)


@dataclass
class TransitionRates:
    """Per-cell lane-change fractions; rates are ``p / lc_duration``."""

    p_left: np.ndarray
    p_right: np.ndarray
    lc_duration: float = 2.0

    def __post_init__(self):
        self.p_left = np.atleast_2d(np.asarray(self.p_left, dtype=float))
        self.p_right = np.atleast_2d(np.asarray(self.p_right, dtype=float))
        if self.lc_duration <= 0:
            raise ValueError("lc_duration must be positive")
        if self.p_left.shape != self.p_right.shape:
            raise ValueError("p_left and p_right must have the same shape")
        for name, p in (("p_left", self.p_left), ("p_right", self.p_right)):
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if np.any(self.p_left + self.p_right > 1 + 1e-12):
            raise ValueError("p_left + p_right must not exceed 1")

    @property
    def rate_left(self) -> np.ndarray:
        return self.p_left / self.lc_duration

    @property
    def rate_right(self) -> np.ndarray:
        return self.p_right / self.lc_duration

    @classmethod
    def uniform(cls, shape, p_left: float, p_right: float, lc_duration: float = 2.0) -> "TransitionRates":
        return cls(np.full(shape, p_left), np.full(shape, p_right), lc_duration)


def _gated_rates(rates: TransitionRates, actions):
    """Effective left/right rates with actions applied and border sides removed."""
    m = rates.p_left.shape[0]
    act = np.ones(rates.p_left.shape + (2,)) if actions is None else np.asarray(actions, dtype=float)
    if act.shape != rates.p_left.shape + (2,):
        raise ValueError(f"actions must have shape {rates.p_left.shape + (2,)}, got {act.shape}")
    rl = rates.rate_left * act[..., 0]
    rr = rates.rate_right * act[..., 1]
    rl[m - 1] = 0.0  # nothing to the left of the top lane
    rr[0] = 0.0  # nothing to the right of lane 1
    return rl, rr


def source_terms(field: MacroField, rates: TransitionRates, actions=None):
    """Instantaneous lane-change exchange.

    Lane ``a`` gains ``rho[a-1] * rl[a-1]`` from its right neighbour and
    ``rho[a+1] * rr[a+1]`` from its left neighbour, and loses
    ``rho[a] * (rl[a] + rr[a])``. Momentum travels with the source lane's speed.

    Returns:
        (mass_rate, momentum_rate), each (n_lanes, n_cells).
    """
    rl, rr = _gated_rates(rates, actions)
    rho, v = field.rho, field.v
    out_l = rho * rl
    out_r = rho * rr
    mass = -(out_l + out_r)
    mom = -(out_l + out_r) * v
    mass[1:] += out_l[:-1]
    mom[1:] += out_l[:-1] * v[:-1]
    mass[:-1] += out_r[1:]
    mom[:-1] += out_r[1:] * v[1:]
    return mass, mom


def _pad(u, boundary):
    if boundary == "periodic":
        return np.concatenate([u[:, -1:], u, u[:, :1]], axis=1)
    return np.concatenate([u[:, :1], u, u[:, -1:]], axis=1)


def _hll_flux(rho, y, params: PdeParams):
    """HLL flux between every pair of neighbouring cells of the padded arrays."""
    p = params.pressure(rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(rho > 0, y / np.where(rho > 0, rho, 1.0) - p, params.v_max)
    v = np.clip(v, 0.0, params.v_max)
    lam1 = v - rho * params.dpressure(rho)
    f_rho = rho * v
    f_y = y * v
    sl = np.minimum(lam1[:, :-1], lam1[:, 1:])
    sr = np.maximum(v[:, :-1], v[:, 1:])
    fl = (f_rho[:, :-1], f_y[:, :-1])
    fr = (f_rho[:, 1:], f_y[:, 1:])
    ul = (rho[:, :-1], y[:, :-1])
    ur = (rho[:, 1:], y[:, 1:])
    out = []
    denom = np.where(sr > sl, sr - sl, 1.0)
    for a, b, ua, ub in zip(fl, fr, ul, ur):
        mid = (sr * a - sl * b + sl * sr * (ub - ua)) / denom
        out.append(np.where(sl >= 0, a, np.where(sr <= 0, b, mid)))
    return out


def characteristic_speed(field: MacroField, params: PdeParams = PdeParams()) -> float:
    """Largest |lambda| present in the field."""
    lam1 = field.v - field.rho * params.dpressure(field.rho)
    return float(max(np.max(np.abs(lam1)), np.max(np.abs(field.v))))


def admissible_dt(field: MacroField, params: PdeParams = PdeParams()) -> float:
    c = characteristic_speed(field, params)
    return math.inf if c == 0 else params.cfl * field.dx / c


def pde_step(field: MacroField, rates: TransitionRates, actions, dt: float,
             params: PdeParams = PdeParams()) -> MacroField:
    """One explicit step: HLL transport, then exchange and relaxation (actions held fixed).

    Raises:
        CflError: if ``dt`` exceeds the admissible step of the current field.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = admissible_dt(field, params)
    if dt > limit * (1 + 1e-12):
        raise CflError(dt, limit)
    rho = field.rho
    y = rho * (field.v + params.pressure(rho))

    # transport
    rp, yp = _pad(rho, params.boundary), _pad(y, params.boundary)
    f_rho, f_y = _hll_flux(rp, yp, params)
    if params.boundary == "closed":
        for f in (f_rho, f_y):
            f[:, 0] = 0.0
            f[:, -1] = 0.0
    lam = dt / field.dx
    rho_new = rho - lam * (f_rho[:, 1:] - f_rho[:, :-1])
    y_new = y - lam * (f_y[:, 1:] - f_y[:, :-1])
    rho_new = np.maximum(rho_new, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_new = np.where(rho_new > 0, y_new / np.where(rho_new > 0, rho_new, 1.0)
                         - params.pressure(rho_new), params.v_max)
    v_new = np.clip(v_new, 0.0, params.v_max)

    # exchange: exact exponential outflow, moved in matched pairs so lane sums are conserved
    rl, rr = _gated_rates(rates, actions)
    tot = rl + rr
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(tot > 0, -np.expm1(-tot * dt) / np.where(tot > 0, tot, 1.0), 0.0)
    move_l = rho_new * rl * frac
    move_r = rho_new * rr * frac
    mom = rho_new * v_new
    mass = rho_new - move_l - move_r
    mom_out = mom - (move_l + move_r) * v_new
    mass[1:] += move_l[:-1]
    mom_out[1:] += move_l[:-1] * v_new[:-1]
    mass[:-1] += move_r[1:]
    mom_out[:-1] += move_r[1:] * v_new[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        v_ex = np.where(mass > 0, mom_out / np.where(mass > 0, mass, 1.0), params.v_max)

    # relaxation towards the equilibrium speed, integrated exactly
    ve = params.ve(mass)
    v_out = ve + (v_ex - ve) * math.exp(-dt / params.relax_time)
    v_out = np.where(mass > 0, np.clip(v_out, 0.0, params.v_max), params.v_max)
    return MacroField(mass, v_out, field.dx)


def pde_advance(field: MacroField, rates: TransitionRates, actions, duration: float,
                params: PdeParams = PdeParams()) -> MacroField:
    """Advance by ``duration`` seconds in CFL-limited substeps with the actions held."""
    t = 0.0
    while t < duration - 1e-12:
        dt = min(admissible_dt(field, params), duration - t)
        field = pde_step(field, rates, actions, dt, params)
        t += dt
    return field


def locality_radius(dt: float, dx: float, params: PdeParams = PdeParams()) -> int:
    """Cells reachable by the fastest wave within ``dt`` (at least the adjacent stencil)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return max(1, math.ceil(dt * params.max_wave_speed() / dx - 1e-12))


def calibrate_rates(intent_counts, presence_counts, lc_duration: float) -> TransitionRates:
    """Estimate lane-change fractions from simulator logs.

    Args:
        intent_counts: (lanes, grids, 2) vehicle-steps with an actionable left/right intent.
        presence_counts: (lanes, grids) vehicle-steps observed in each grid.
        lc_duration: lane-change duration in seconds.

    Returns:
        Rates with ``p = intents / presence``; unvisited grids get 0.
    """
    intents = np.asarray(intent_counts, dtype=float)
    present = np.asarray(presence_counts, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(present[..., None] > 0, intents / np.where(present > 0, present, 1.0)[..., None], 0.0)
    return TransitionRates(np.clip(p[..., 0], 0, 1), np.clip(p[..., 1], 0, 1), lc_duration)


def calibrate_from_world(world) -> TransitionRates:
    return calibrate_rates(world.intent_counts, world.presence_counts, world.road.lc_duration)


def shock_speed(rho_l: float, rho_r: float, params: PdeParams = PdeParams()) -> float:
    """Rankine-Hugoniot speed of an equilibrium density jump."""
    q = lambda r: r * float(params.ve(r))
    return (q(rho_r) - q(rho_l)) / (rho_r - rho_l)


def write_field_csv(path, snapshots) -> None:
    """Write ``(t, MacroField)`` snapshots as rows (t, lane, cell, rho, v); lanes and cells 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lane", "cell", "rho", "v"])
        for t, fld in snapshots:
            for l in range(fld.n_lanes):
                for i in range(fld.n_cells):
                    w.writerow([f"{t:g}", l + 1, i + 1, repr(float(fld.rho[l, i])), repr(float(fld.v[l, i]))])
