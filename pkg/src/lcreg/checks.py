"""Fast oracle checks run by ``lcreg validate``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridstate import GridSpec, aggregate_arrays
from .macroflow import MacroField, PdeParams, TransitionRates, admissible_dt, locality_radius, pde_advance, pde_step, \
    shock_speed
from .qlearner.dqn import mse_loss_and_grads
from .qlearner.network import DEFAULT_LAYERS, MLP
from .roadsim import equilibrium_state

# (flow veh/h, density veh/m, speed m/s) of the three reference demand levels
REFERENCE_TRIPLES = {"low": (1100.0, 0.013, 22.93), "high": (1495.0, 0.02, 20.76),
                     "congested": (1410.0, 0.06, 6.53)}
FD_TOL = 0.02
MASS_TOL = 1e-12
SHOCK_TOL = 0.05
GRAD_TOL = 1e-4


@dataclass
class Check:
    name: str
    passed: bool
    measured: str
    tolerance: str


def fundamental_diagram_checks() -> list:
    out = []
    for name, (q_ref, rho_ref, v) in REFERENCE_TRIPLES.items():
        rho, q = equilibrium_state(v)
        e_rho = abs(rho - rho_ref) / rho_ref
        e_q = abs(q - q_ref) / q_ref
        out.append(Check(f"fd_{name}_density", e_rho <= FD_TOL, f"rho={rho:.5f} rel_err={e_rho:.4f}", f"<= {FD_TOL}"))
        out.append(Check(f"fd_{name}_flow", e_q <= FD_TOL, f"q={q:.1f} rel_err={e_q:.4f}", f"<= {FD_TOL}"))
    return out


def pde_mass_drift(steps: int = 10_000, seed: int = 0, lanes: int = 5, cells: int = 10, dx: float = 100.0) -> float:
    """Relative total-mass drift of the closed-boundary solver under random action fields."""
    rng = np.random.default_rng(seed)
    pp = PdeParams(boundary="closed")
    fld = MacroField.equilibrium(rng.uniform(0.005, 0.12, (lanes, cells)), dx, pp)
    rates = TransitionRates(rng.uniform(0, 0.2, (lanes, cells)), rng.uniform(0, 0.2, (lanes, cells)))
    m0 = fld.total_mass()
    dt = 0.5 * pp.cfl * dx / pp.max_wave_speed()
    for _ in range(steps):
        act = rng.integers(0, 2, (lanes, cells, 2))
        fld = pde_step(fld, rates, act, dt, pp)
    return abs(fld.total_mass() - m0) / m0


def riemann_shock_speed(rho_l: float = 0.02, rho_r: float = 0.06, n_cells: int = 200,
                        length: float = 2000.0, t1: float = 20.0, t2: float = 80.0) -> tuple:
    """Measured and Rankine-Hugoniot speeds of a single-lane equilibrium density jump.

    The front is located where the density crosses the midpoint value.
    """
    pp = PdeParams(boundary="open")
    dx = length / n_cells
    xc = (np.arange(n_cells) + 0.5) * dx
    fld = MacroField.equilibrium(np.where(xc < length / 2, rho_l, rho_r)[None, :], dx, pp)
    rates = TransitionRates.uniform((1, n_cells), 0.0, 0.0)
    mid = 0.5 * (rho_l + rho_r)

    def front(f):
        r = f.rho[0]
        k = int(np.nonzero((r[:-1] < mid) & (r[1:] >= mid))[0][-1])
        return xc[k] + (mid - r[k]) / (r[k + 1] - r[k]) * dx

    f1 = pde_advance(fld, rates, None, t1, pp)
    f2 = pde_advance(f1, rates, None, t2 - t1, pp)
    return (front(f2) - front(f1)) / (t2 - t1), shock_speed(rho_l, rho_r, pp)


def locality_violation(seed: int = 0, lanes: int = 5, cells: int = 10, dx: float = 100.0) -> float:
    """Largest one-step change at cells farther than the locality radius from a perturbation."""
    rng = np.random.default_rng(seed)
    pp = PdeParams(boundary="closed")
    base = MacroField.equilibrium(rng.uniform(0.005, 0.1, (lanes, cells)), dx, pp)
    rates = TransitionRates(rng.uniform(0, 0.2, (lanes, cells)), rng.uniform(0, 0.2, (lanes, cells)))
    act = rng.integers(0, 2, (lanes, cells, 2))
    worst = 0.0
    for _ in range(20):
        l, i = rng.integers(lanes), rng.integers(cells)
        pert = base.copy()
        pert.rho[l, i] *= 1.5
        pert.v[l, i] *= 0.7
        dt = min(admissible_dt(base, pp), admissible_dt(pert, pp))
        r = locality_radius(dt, dx, pp)
        a = pde_step(base, rates, act, dt, pp)
        b = pde_step(pert, rates, act, dt, pp)
        far = np.ones((lanes, cells), dtype=bool)
        far[max(l - 1, 0):l + 2, max(i - r, 0):i + r + 1] = False
        worst = max(worst, float(np.max(np.abs(a.rho - b.rho)[far], initial=0.0)),
                    float(np.max(np.abs(a.v - b.v)[far], initial=0.0)))
    return worst


def gradient_check(n_cases: int = 100, seed: int = 0, layers=DEFAULT_LAYERS, batch: int = 8) -> float:
    """Worst relative error between analytic and central-difference directional derivatives of the TD loss."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_cases):
        net = MLP(layers, np.random.default_rng([seed, case]), np.float64)
        for k in range(1, len(net.params), 2):
            net.params[k][...] = rng.normal(0, 0.1, net.params[k].shape)
        x = rng.random((batch, layers[0]))
        a = rng.integers(0, layers[-1], batch)
        y = rng.normal(0, 1, batch)
        _, grads = mse_loss_and_grads(net, x, a, y)
        d = [rng.normal(size=p.shape) for p in net.params]
        norm = np.sqrt(sum(float(np.sum(di * di)) for di in d))
        d = [di / norm for di in d]  # unit step keeps the probe away from ReLU kinks
        analytic = sum(float(np.sum(g * di)) for g, di in zip(grads, d))
        h = 1e-6
        base = [p.copy() for p in net.params]

        def loss_at(s):
            net.load([p + s * di for p, di in zip(base, d)])
            return mse_loss_and_grads(net, x, a, y)[0]

        numeric = (loss_at(h) - loss_at(-h)) / (2 * h)
        net.load(base)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst


def aggregation_mismatch(seed: int = 0, n: int = 300) -> float:
    """Max difference between vectorised aggregation and a per-vehicle loop."""
    rng = np.random.default_rng(seed)
    spec = GridSpec(100.0, 10, 5)
    lane = rng.integers(1, 6, n)
    x = rng.uniform(0, spec.road_length, n)
    v = rng.uniform(0, 30, n)
    cv = rng.random(n) < 0.5
    got = aggregate_arrays(lane, x, v, cv, spec).as_array()
    want = np.zeros_like(got)
    for l in range(5):
        for g in range(10):
            sel = [k for k in range(n) if lane[k] == l + 1 and g * 100.0 <= x[k] < (g + 1) * 100.0]
            selc = [k for k in sel if cv[k]]
            want[l, g] = [len(sel) / 100.0, len(selc) / 100.0,
                          np.mean(v[sel]) if sel else 24.59, np.mean(v[selc]) if selc else 24.59]
    return float(np.max(np.abs(got - want)))


def all_checks() -> list:
    out = fundamental_diagram_checks()
    drift = pde_mass_drift()
    out.append(Check("pde_closed_mass_drift", drift < MASS_TOL, f"{drift:.3e}", f"< {MASS_TOL:g}"))
    measured, rh = riemann_shock_speed()
    err = abs(measured - rh) / abs(rh)
    out.append(Check("pde_riemann_shock_speed", bool(err <= SHOCK_TOL),
                     f"measured={measured:.5f} rh={rh:.5f} rel_err={err:.4f}", f"<= {SHOCK_TOL}"))
    loc = locality_violation()
    out.append(Check("pde_locality", loc == 0.0, f"max_far_change={loc:.3e}", "== 0"))
    r = locality_radius(4.0, 100.0)
    out.append(Check("pde_locality_radius", r == 1, f"radius(4 s, 100 m)={r}", "== 1"))
    g = gradient_check()
    out.append(Check("mlp_gradient_check", g < GRAD_TOL, f"max_rel_err={g:.3e}", f"< {GRAD_TOL:g}"))
    agg = aggregation_mismatch()
    out.append(Check("grid_aggregation", agg < 1e-12, f"max_abs_diff={agg:.3e}", "< 1e-12"))
    return out
