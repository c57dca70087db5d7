import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from lcreg.env import (EnvConfig, EventRanges, RegulationEnv, RewardWeights, Scenario, decode_actions, encode_actions,
                       load_scenario, reward, reward_components, reward_field, save_scenario)
from lcreg.gridstate import RHO_MAX, V_MAX, GridSpec, GridState
from lcreg.roadsim import ConfigError, ScenarioEvent, SimulationFault

SPEC = GridSpec(100.0, 10, 5)


def _short(name="stable_flow", demand="low", cv_rate=1.0, steps=5, warmup=30.0, **kw):
    return Scenario(name=name, demand=demand, cv_rate=cv_rate, env=EnvConfig(episode_length=steps, warmup=warmup), **kw)


def _brute_reward(arr, lane, grid, w=RewardWeights()):
    """Explicit neighbourhood enumeration; arr is (lanes, grids, 4)."""
    r1 = r2 = 0.0
    n = 0
    for l in range(lane - 1, lane + 2):
        for g in range(grid - 2, grid + 3):
            if 1 <= l <= arr.shape[0] and 1 <= g <= arr.shape[1]:
                rho, _, v, _ = arr[l - 1, g - 1]
                r1 += min(max(v / w.v_max, 0.0), 1.0)
                r2 += min(max(1 - rho / w.rho_max, 0.0), 1.0)
                n += 1
    return w.w1 * r1 / n + w.w2 * r2 / n


# ---------------------------------------------------------------- actions
def test_action_encoding_round_trip():
    idx = encode_actions([0, 0, 1, 1], [0, 1, 0, 1])
    assert idx.tolist() == [0, 1, 2, 3]
    np.testing.assert_array_equal(decode_actions(idx), [[0, 0], [0, 1], [1, 0], [1, 1]])
    with pytest.raises(ValueError):
        decode_actions([4])


def test_reward_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(0.6, 0.6)
    w = RewardWeights()
    assert (w.w1, w.w2, w.v_max, w.rho_max) == (0.5, 0.5, 24.59, 0.133)


# ---------------------------------------------------------------- rewards
def test_empty_road_reward_one():
    f = GridState.uniform(SPEC, 0.0, V_MAX)
    np.testing.assert_allclose(reward_field(f), 1.0)


def test_jam_reward_zero():
    f = GridState.uniform(SPEC, RHO_MAX, 0.0)
    np.testing.assert_allclose(reward_field(f), 0.0, atol=1e-15)


def test_half_field_reward_half():
    f = GridState.uniform(SPEC, RHO_MAX / 2, V_MAX / 2)
    np.testing.assert_allclose(reward_field(f), 0.5)


def test_corner_uses_clipped_divisor():
    arr = GridState.uniform(SPEC, 0.0, V_MAX).as_array()
    arr[0, 0, 2] = 0.0  # one stopped cell inside the corner neighbourhood of (1, 1)
    f = GridState.from_array(arr)
    r1, _ = reward_components(f)
    assert r1[0, 0] == pytest.approx(1 - 1 / 6)  # 2 lanes x 3 grids
    assert r1[2, 4] == pytest.approx(1.0)
    assert r1[1, 2] == pytest.approx(1 - 1 / 15)  # lane 2, grid 3: full 3 x 5 box
    assert r1[4, 9] == pytest.approx(1.0) and r1[0, 1] == pytest.approx(1 - 1 / 8)


@given(hnp.arrays(np.float64, (5, 10, 4), elements=st.floats(0, 40)))
def test_reward_field_matches_enumeration(arr):
    f = GridState.from_array(arr)
    rf = reward_field(f)
    assert np.all((rf >= 0) & (rf <= 1 + 1e-12))
    for l in (1, 3, 5):
        for g in (1, 2, 6, 10):
            assert rf[l - 1, g - 1] == pytest.approx(_brute_reward(arr, l, g), abs=1e-12)
            assert reward(f, l, g) == pytest.approx(rf[l - 1, g - 1], abs=1e-12)


@given(hnp.arrays(np.float64, (5, 10, 4), elements=st.floats(0, 40)), st.integers(1, 5), st.integers(1, 10),
       st.integers(0, 2**32 - 1))
def test_reward_locality(arr, lane, grid, seed):
    r = np.random.default_rng(seed)
    other = r.uniform(0, 40, arr.shape)
    inside = np.zeros(arr.shape[:2], bool)
    inside[max(lane - 2, 0):lane + 1, max(grid - 3, 0):grid + 2] = True
    mixed = np.where(inside[..., None], arr, other)
    assert reward(GridState.from_array(mixed), lane, grid) == reward(GridState.from_array(arr), lane, grid)


# ---------------------------------------------------------------- stepping
def test_reset_determinism():
    a, b = RegulationEnv(_short()), RegulationEnv(_short())
    np.testing.assert_array_equal(a.reset(7), b.reset(7))
    assert not np.array_equal(a.reset(7), RegulationEnv(_short()).reset(8))


def test_observation_and_reward_shapes():
    env = RegulationEnv(_short())
    obs = env.reset(1)
    assert obs.shape == (5, 10, 75)
    obs, rew, done, info = env.step(np.full((5, 10), 3))
    assert rew.shape == (5, 10) and np.all((rew >= 0) & (rew <= 1))
    assert not done and info.fault is None


def test_reward_is_mean_of_four_samples():
    env = RegulationEnv(_short())
    env.reset(3)
    ref = RegulationEnv(_short())
    ref.reset(3)
    _, rew, _, info = env.step(np.full((5, 10), 3))
    samples = []
    for _ in range(4):
        ref.world.run(1.0)
        samples.append(reward_field(ref.field()))
    np.testing.assert_allclose(rew, np.mean(samples, axis=0), rtol=1e-12)
    np.testing.assert_allclose(info.r1 * 0.5 + info.r2 * 0.5, rew, rtol=1e-12)


def test_empty_road_rewards_one():
    sc = _short(per_lane_inflow=0.0)
    env = RegulationEnv(sc)
    env.reset(1)
    while not env.done:
        _, rew, _, _ = env.step(np.zeros((5, 10), int))
        np.testing.assert_allclose(rew, 1.0)


def test_done_after_episode_length_and_step_after_done():
    env = RegulationEnv(_short(steps=3))
    env.reset(1)
    flags = [env.step(np.full((5, 10), 3))[2] for _ in range(3)]
    assert flags == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(np.full((5, 10), 3))


def test_bad_action_shape():
    env = RegulationEnv(_short())
    env.reset(1)
    with pytest.raises(ValueError):
        env.step(np.zeros((5, 9)))


def test_all_allow_matches_baseline_world():
    sc = _short(steps=20)
    env = RegulationEnv(sc, record_trajectory=True)
    env.reset(11)
    while not env.done:
        env.step(np.full((5, 10), 3))
    base = RegulationEnv(sc, record_trajectory=True)
    base.reset(11)
    base.world.run(20 * 4.0)  # no permissions argument: the plain simulator
    assert env.world.trajectory == base.world.trajectory


def test_gating_soundness_full_penetration():
    sc = _short(demand="high", steps=60)
    env = RegulationEnv(sc)
    env.reset(5)
    start = len(env.world.lane_changes)
    act = np.full((5, 10), 3)
    act[:, 2:6] = 1  # left denied in grids 3..6
    act[:, 7] = 2  # right denied in grid 8
    while not env.done:
        env.step(act)
    ev = env.world.lane_changes[start:]
    assert len(ev) > 0
    assert not [e for e in ev if e.direction == "left" and 3 <= e.grid <= 6 and e.t > env.world.warmup + 4.0]
    assert not [e for e in ev if e.direction == "right" and e.grid == 8 and e.t > env.world.warmup + 4.0]
    assert [e for e in ev if e.direction == "left" and e.grid in (1, 2, 7, 8, 9, 10)]


def test_deny_all_blocks_every_cv_change():
    env = RegulationEnv(_short(demand="high", steps=30))
    env.reset(2)
    start = len(env.world.lane_changes)
    n = 0
    while not env.done:
        n += env.step(np.zeros((5, 10), int))[3].lane_changes
    late = [e for e in env.world.lane_changes[start:] if e.t > env.world.warmup + 4.0]
    assert late == [] and n <= len(env.world.lane_changes) - start


def test_hv_immunity_without_cvs():
    sc = _short(demand="high", cv_rate=0.0, steps=25)
    rng = np.random.default_rng(0)
    a, b = RegulationEnv(sc, record_trajectory=True), RegulationEnv(sc, record_trajectory=True)
    a.reset(9)
    b.reset(9)
    while not a.done:
        a.step(rng.integers(0, 4, (5, 10)))
        b.step(np.full((5, 10), 3))
    assert a.world.trajectory == b.world.trajectory
    assert [(e.t, e.vehicle_id) for e in a.world.lane_changes] == [(e.t, e.vehicle_id) for e in b.world.lane_changes]


def test_fault_terminates_episode(monkeypatch):
    env = RegulationEnv(_short())
    env.reset(1)

    def boom(perm=None):
        raise SimulationFault("overlap", {"t": 1.0, "lane": 2})

    monkeypatch.setattr(env.world, "step", boom)
    _, _, done, info = env.step(np.full((5, 10), 3))
    assert done and info.fault["message"] == "overlap" and info.fault["lane"] == 2
    assert env.fault == info.fault


def test_episode_csv(tmp_path):
    env = RegulationEnv(_short(steps=2))
    env.reset(1)
    env.step(np.full((5, 10), 2))
    env.step(np.full((5, 10), 1))
    path = tmp_path / "ep.csv"
    env.write_episode_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "env_step,lane,grid,action_left,action_right,reward"
    assert len(lines) == 1 + 2 * 50
    assert lines[1].split(",")[:5] == ["0", "1", "1", "1", "0"]
    assert lines[51].split(",")[:5] == ["1", "1", "1", "0", "1"]
    assert float(lines[1].split(",")[5]) == env.reward_log[0][0, 0]


# ---------------------------------------------------------------- scenarios
def test_stable_flow_has_no_events():
    env = RegulationEnv(_short())
    for s in range(5):
        env.reset(s)
        assert env.world.events == []


def test_lane_degrade_single_event_in_range():
    env = RegulationEnv(_short("lane_degrade"))
    for s in range(30):
        env.reset(s)
        assert len(env.world.events) == 1
        ev = env.world.events[0]
        assert ev.kind == "lane_degrade" and 4.0 <= ev.degrade_time_gap <= 10.0
        assert 1 <= ev.lane <= 5


def test_vehicle_stop_single_event():
    env = RegulationEnv(_short("vehicle_stop"))
    env.reset(4)
    assert [e.kind for e in env.world.events] == ["vehicle_stop"]


def test_event_draw_is_seeded():
    a, b = RegulationEnv(_short("lane_degrade")), RegulationEnv(_short("lane_degrade"))
    a.reset(21)
    b.reset(21)
    assert a.world.events == b.world.events


@pytest.mark.parametrize("kw", [dict(name="rain"), dict(demand="medium"), dict(cv_rate=1.5),
                                dict(env=EnvConfig(env_step=4.0, reward_step=1.5)),
                                dict(env=EnvConfig(grid_length=300.0))])
def test_invalid_scenarios(kw):
    with pytest.raises(ConfigError):
        Scenario(**kw)


def test_event_range_validation():
    with pytest.raises(ConfigError):
        EventRanges(degrade_time_gap=(2.0, 6.0))


def test_scenario_yaml_round_trip(tmp_path):
    sc = Scenario(name="lane_degrade", demand="high", cv_rate=0.5, env=EnvConfig(episode_length=10),
                  events=[ScenarioEvent("lane_degrade", 2, (100.0, 300.0), (10.0, 50.0), degrade_time_gap=7.0)])
    path = tmp_path / "sc.yaml"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert back == sc
    assert back.to_dict() == sc.to_dict()


def test_scenario_yaml_unknown_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"scenario": "stable_flow", "weather": "rain"}))
    with pytest.raises(ConfigError, match="weather"):
        load_scenario(path)
    path.write_text(yaml.safe_dump({"road": {"lanes": 5, "surface": "wet"}}))
    with pytest.raises(ConfigError):
        load_scenario(path)
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_fixed_events_replace_randomisation():
    ev = ScenarioEvent("lane_degrade", 3, (200.0, 400.0), (0.0, 500.0), degrade_time_gap=5.0)
    env = RegulationEnv(_short("lane_degrade", events=[ev]))
    env.reset(1)
    assert env.world.events == [ev]
