import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from lcreg.roadsim import IdmParams, NO_LEADER_GAP, equilibrium_speed, equilibrium_state, idm_acceleration, \
    jam_density
from lcreg.roadsim.idm import equilibrium_gap, gap_speed_table, table_speed_for_gap

P = IdmParams()


def test_table_one_defaults():
    assert (P.vehicle_length, P.desired_speed, P.time_gap, P.min_gap) == (5.0, 24.59, 1.4, 2.5)
    assert (P.accel_exponent, P.max_accel, P.comfort_decel) == (4.0, 0.73, 1.67)


@pytest.mark.parametrize("kw", [{"time_gap": 0.0}, {"max_accel": -1.0}, {"accel_exponent": 0.5}])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        IdmParams(**kw)


def test_standstill_on_empty_road():
    assert idm_acceleration(0.0, NO_LEADER_GAP, 0.0, P) == pytest.approx(0.73, abs=1e-9)


def test_desired_speed_fixed_point():
    assert idm_acceleration(24.59, NO_LEADER_GAP, 0.0, P) == pytest.approx(0.0, abs=1e-9)


def test_net_force_vanishes_at_equilibrium_gap():
    # root of the IDM acceleration in the gap, found numerically, is the closed-form equilibrium gap
    v = 20.76
    root = brentq(lambda s: idm_acceleration(v, s, 0.0, P), 3.0, 500.0, xtol=1e-12)
    s_e = (P.min_gap + v * P.time_gap) / math.sqrt(1 - (v / P.desired_speed) ** 4)
    assert root == pytest.approx(s_e, rel=1e-9)
    assert s_e == pytest.approx(45.0, abs=0.1)
    assert abs(idm_acceleration(v, s_e, 0.0, P)) < 1e-3


@pytest.mark.parametrize("args", [(math.nan, 10, 0), (10, math.inf, 0), (10, 10, math.nan)])
def test_non_finite_inputs_rejected(args):
    with pytest.raises(ValueError, match="non-finite"):
        idm_acceleration(*args, P)


def test_non_positive_gap_rejected():
    with pytest.raises(ValueError):
        idm_acceleration(10.0, 0.0, 0.0, P)


@given(st.floats(0, 40), st.floats(0.01, 2000), st.floats(-30, 30), st.floats(1.0, 10.0))
def test_acceleration_never_exceeds_max(v, gap, dv, eff_t):
    assert idm_acceleration(v, gap, dv, P, eff_t) <= P.max_accel + 1e-12


def test_larger_time_gap_brakes_harder():
    assert idm_acceleration(20, 50, 0, P, 6.0) < idm_acceleration(20, 50, 0, P)


@pytest.mark.parametrize("v,rho_ref,q_ref", [(20.76, 0.02, 1495.0), (6.53, 0.06, 1410.0)])
def test_equilibrium_state_reference_triples(v, rho_ref, q_ref):
    rho, q = equilibrium_state(v)
    assert rho == pytest.approx(rho_ref, rel=0.02)
    assert q == pytest.approx(q_ref, rel=0.02)


def test_equilibrium_state_low_demand_value():
    # flow matches 1100 veh/h; density is 0.01332, which is 2.5% above the rounded 0.013
    rho, q = equilibrium_state(22.93)
    s_e = (2.5 + 22.93 * 1.4) / math.sqrt(1 - (22.93 / 24.59) ** 4)
    assert rho == pytest.approx(1 / (s_e + 5), rel=1e-12)
    assert q == pytest.approx(1100, rel=0.02)
    assert rho == pytest.approx(0.01332, abs=1e-5)


def test_equilibrium_state_free_flow_limit():
    with pytest.raises(ValueError, match="free-flow"):
        equilibrium_state(24.59)
    with pytest.raises(ValueError):
        equilibrium_state(-1.0)


@given(st.floats(0.0, 24.0), st.floats(0.01, 0.5))
def test_density_strictly_decreasing_in_speed(v, dv):
    v2 = min(v + dv, 24.5)
    if v2 <= v:
        return
    assert equilibrium_state(v2)[0] < equilibrium_state(v)[0]


def test_flow_concave_in_density():
    vs = np.linspace(0.0, 24.5, 2000)
    rho, q = np.array([equilibrium_state(v) for v in vs]).T
    order = np.argsort(rho)
    rho, q = rho[order], q[order]
    slope = np.diff(q) / np.diff(rho)
    assert np.all(np.diff(slope) <= 1e-6 * np.abs(slope[:-1]).max())


def test_equilibrium_speed_inverts_state():
    for v in (2.0, 6.53, 15.0, 20.76, 22.93):
        rho, _ = equilibrium_state(v)
        assert float(equilibrium_speed(rho)) == pytest.approx(v, abs=0.02)
    assert float(equilibrium_speed(0.0)) == pytest.approx(P.desired_speed)
    assert float(equilibrium_speed(jam_density())) == pytest.approx(0.0, abs=1e-6)


def test_gap_speed_table_matches_bisection():
    table = gap_speed_table(P, 150.0)
    for gap in (1.0, 2.5, 10.0, 45.0, 77.7, 149.0):
        want = brentq(lambda v: equilibrium_gap(v, 24.59, 1.4, 2.5, 4.0) - gap, 0.0, 24.589999) if gap > 2.5 else 0.0
        assert table_speed_for_gap(gap, table) == pytest.approx(want, abs=0.01)
