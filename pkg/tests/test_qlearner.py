import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lcreg import checks
from lcreg.env import EnvConfig, RegulationEnv, Scenario
from lcreg.gridstate import FEATURES, OBS_SIZE
from lcreg.qlearner import (LOG_COLUMNS, MLP, DoubleDQN, NonFiniteLoss, ReplayBuffer, TrainConfig, config_hash,
                            double_dqn_target, episode_seed, greedy, load_checkpoint, mse_loss_and_grads,
                            save_checkpoint, select_actions, train)
from lcreg.roadsim import SimulationFault

SMALL = (OBS_SIZE, 16, 16, 4)


def _env_factory(steps=4, warmup=20.0, demand="low"):
    sc = Scenario(demand=demand, env=EnvConfig(episode_length=steps, warmup=warmup))
    return lambda: RegulationEnv(sc)


def _fd_grads(net, obs, act, y, h=1e-6):
    """Central differences of the loss along every coordinate of every parameter."""
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            lp, _ = mse_loss_and_grads(net, obs, act, y)
            p[i] = old - h
            lm, _ = mse_loss_and_grads(net, obs, act, y)
            p[i] = old
            g[i] = (lp - lm) / (2 * h)
        out.append(g)
    return out


# ---------------------------------------------------------------- network
def test_default_architecture():
    net = MLP()
    assert net.layers == (75, 128, 128, 4)
    assert [p.shape for p in net.params] == [(75, 128), (128,), (128, 128), (128,), (128, 4), (4,)]


def test_forward_deterministic_and_finite(rng):
    net = MLP(rng=np.random.default_rng(1))
    x = rng.random((50, OBS_SIZE))
    q1, q2 = net(x), net(x)
    np.testing.assert_array_equal(q1, q2)
    assert np.all(np.isfinite(q1))


def test_backprop_matches_every_coordinate(rng):
    net = MLP((6, 5, 4, 4), np.random.default_rng(3), dtype=np.float64)
    for p in net.params[1::2]:
        p[...] = rng.normal(0, 0.3, p.shape)  # non-zero biases keep pre-activations away from 0
    obs = rng.random((7, 6))
    act = rng.integers(0, 4, 7)
    y = rng.normal(size=7)
    _, grads = mse_loss_and_grads(net, obs, act, y)
    for g, fd in zip(grads, _fd_grads(net, obs, act, y)):
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_gradient_check_100_random_cases():
    assert checks.gradient_check(n_cases=100) < 1e-4


# ---------------------------------------------------------------- action selection
def test_pure_exploration_is_uniform():
    net = MLP(SMALL)
    obs = np.zeros((10_000, OBS_SIZE))
    a = select_actions(net, obs, 1.0, np.random.default_rng(0))
    counts = np.bincount(a, minlength=4)
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 2500) < 3 * sigma)


def test_greedy_with_hand_set_weights():
    net = MLP(SMALL)
    for p in net.params:
        p[...] = 0
    net.params[-1][...] = [0.0, 0.1, 0.2, 1.0]
    a = select_actions(net, np.random.default_rng(1).random((5, 10, OBS_SIZE)), 0.0, np.random.default_rng(0))
    assert a.shape == (5, 10) and np.all(a == 3)


def test_identical_observations_identical_actions(rng):
    net = MLP(rng=np.random.default_rng(4))
    o = rng.random(OBS_SIZE)
    obs = np.broadcast_to(o, (5, 10, OBS_SIZE))
    a = select_actions(net, obs, 0.0, rng)
    assert np.all(a == a[0, 0])


def test_ties_go_to_lowest_index():
    assert greedy(np.array([[1.0, 3.0, 3.0, 0.0], [2.0, 2.0, 2.0, 2.0]])).tolist() == [1, 0]


def test_epsilon_validation():
    with pytest.raises(ValueError):
        select_actions(MLP(SMALL), np.zeros((1, OBS_SIZE)), 1.5, np.random.default_rng(0))


# ---------------------------------------------------------------- targets and loss
def test_gamma_zero_target_is_reward(rng):
    on, tg = MLP(SMALL, np.random.default_rng(1)), MLP(SMALL, np.random.default_rng(2))
    r = rng.random(20)
    y = double_dqn_target(on, tg, r, rng.random((20, OBS_SIZE)), np.zeros(20), 0.0)
    np.testing.assert_allclose(y, r)


def test_shared_weights_reduce_to_max_target(rng):
    on = MLP(SMALL, np.random.default_rng(1), dtype=np.float64)
    nobs = rng.random((30, OBS_SIZE))
    r = rng.random(30)
    y = double_dqn_target(on, on.copy(), r, nobs, np.zeros(30), 0.95)
    np.testing.assert_allclose(y, r + 0.95 * on(nobs).max(axis=1))


def test_double_target_selects_online_evaluates_target(rng):
    on, tg = MLP(SMALL, np.random.default_rng(1), np.float64), MLP(SMALL, np.random.default_rng(2), np.float64)
    nobs = rng.random((30, OBS_SIZE))
    y = double_dqn_target(on, tg, np.zeros(30), nobs, np.zeros(30), 0.5)
    a = on(nobs).argmax(axis=1)
    np.testing.assert_allclose(y, 0.5 * tg(nobs)[np.arange(30), a])


def test_terminal_rows_use_reward_only(rng):
    on = MLP(SMALL, np.random.default_rng(1))
    y = double_dqn_target(on, on, [0.3, 0.4], rng.random((2, OBS_SIZE)), [True, False], 0.9)
    assert y[0] == pytest.approx(0.3) and y[1] != pytest.approx(0.4)


def test_identical_tuples_at_current_q_have_zero_loss(rng):
    net = MLP(SMALL, np.random.default_rng(1), np.float64)
    o = np.repeat(rng.random((1, OBS_SIZE)), 16, axis=0)
    a = np.full(16, 2)
    loss, grads = mse_loss_and_grads(net, o, a, net(o)[:, 2])
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_single_tuple_loss_decreases(rng):
    agent = DoubleDQN(SMALL, lr=1e-4, target_period=0, dtype=np.float64)
    o = rng.random((1, OBS_SIZE))
    losses = []
    for _ in range(200):
        # target held fixed at y = 5 by a terminal transition
        losses.append(agent.update(o, np.array([1]), np.array([5.0]), o, np.array([True])))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_aborts_with_dump(rng):
    agent = DoubleDQN(SMALL)
    o = rng.random((2, OBS_SIZE))
    with pytest.raises(NonFiniteLoss) as info:
        agent.update(o, np.array([0, 1]), np.array([np.nan, 0.0]), o, np.array([True, True]))
    assert {"params", "obs", "actions", "y"} <= set(info.value.dump)


# ---------------------------------------------------------------- target network
def test_target_sync_schedule(rng):
    agent = DoubleDQN(SMALL, lr=1e-2, target_period=5, dtype=np.float64)
    o = rng.random((8, OBS_SIZE))
    before = [p.copy() for p in agent.target.params]
    for k in range(1, 11):
        agent.update(o, rng.integers(0, 4, 8), rng.random(8), o, np.zeros(8))
        same = all(np.array_equal(a, b) for a, b in zip(before, agent.target.params))
        if k % 5:
            assert same
            assert agent.train_steps - agent.last_sync < 5
        else:
            assert not same
            np.testing.assert_array_equal(agent.target(o), agent.online(o))
            before = [p.copy() for p in agent.target.params]


def test_target_period_one_tracks_online(rng):
    agent = DoubleDQN(SMALL, lr=1e-2, target_period=1)
    o = rng.random((8, OBS_SIZE))
    for _ in range(5):
        agent.update(o, rng.integers(0, 4, 8), rng.random(8), o, np.zeros(8))
        np.testing.assert_array_equal(agent.target(o), agent.online(o))


def test_two_state_mdp_matches_value_iteration():
    # state s in {0, 1}; action a moves to a % 2; reward 1 only for staying in state 1 with action 1
    gamma = 0.95

    def reward(s, a):
        return 1.0 if (s == 1 and a == 1) else 0.0

    q = np.zeros((2, 4))
    for _ in range(2000):
        q = np.array([[reward(s, a) + gamma * q[a % 2].max() for a in range(4)] for s in range(2)])

    onehot = np.eye(2)
    s = np.repeat([0, 1], 4)
    a = np.tile(np.arange(4), 2)
    obs, nobs = onehot[s], onehot[a % 2]
    r = np.array([reward(i, j) for i, j in zip(s, a)])
    agent = DoubleDQN((2, 32, 4), lr=3e-3, gamma=gamma, target_period=25, seed=0, dtype=np.float64)
    for _ in range(10_000):
        agent.update(obs, a, r, nobs, np.zeros(8))
    learned = agent.online(onehot)
    np.testing.assert_allclose(learned, q, atol=1e-2)


# ---------------------------------------------------------------- replay
def _transition(r, k):
    st_ = r.random((5, 10, len(FEATURES)))
    return st_, r.integers(0, 4, (5, 10)), r.random((5, 10)), st_ + 1, bool(k % 2)


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3, 5, 10)
    r = np.random.default_rng(0)
    for k in range(5):
        s, a, rew, ns, d = _transition(r, k)
        buf.add(np.full_like(s, k), a, rew, ns, d)
    assert len(buf) == 3
    assert sorted(buf.state[:, 0, 0, 0].tolist()) == [2.0, 3.0, 4.0]


def test_replay_sampling_deterministic_and_uniform():
    def fill(seed):
        buf = ReplayBuffer(10, 5, 10, seed=seed)
        for k in range(10):
            s, a, rew, ns, d = _transition(np.random.default_rng(k), k)
            buf.add(np.full_like(s, k), a, rew, ns, d)
        return buf

    a, b = fill(3), fill(3)
    for _ in range(5):
        for x, y in zip(a.sample(32), b.sample(32)):
            np.testing.assert_array_equal(x, y)
    draws = fill(4).sample(20_000)[0][:, 0, 0, 0].astype(int)
    assert stats.chisquare(np.bincount(draws, minlength=10)).pvalue > 1e-3


def test_replay_rollback():
    buf = ReplayBuffer(10, 5, 10)
    r = np.random.default_rng(0)
    for k in range(4):
        buf.add(*_transition(r, k))
    buf.mark()
    for k in range(3):
        buf.add(*_transition(r, k))
    assert buf.rollback() == 3
    assert len(buf) == 4 and buf.pos == 4
    assert buf.rollback() == 0
    with pytest.raises(ValueError):
        ReplayBuffer(10, 5, 10).sample(1)


# ---------------------------------------------------------------- training loop
def test_config_validation_and_schedule():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(eps_end=1.5)
    cfg = TrainConfig(total_steps=1000)
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(400) == pytest.approx(0.05) and cfg.epsilon(900) == pytest.approx(0.05)
    assert cfg.epsilon(200) == pytest.approx(0.525)
    assert 0 <= TrainConfig(total_steps=0).epsilon(10) <= 1


def test_zero_steps_initial_checkpoint_only(tmp_path):
    res = train(_env_factory(), TrainConfig(total_steps=0, layers=SMALL), tmp_path, "h")
    assert res.log == []
    assert [(s, p.name) for s, p, _ in res.checkpoints] == [(0, "ckpt_0000000.npz")]


def test_training_log_and_checkpoints(tmp_path):
    cfg = TrainConfig(total_steps=10, layers=SMALL, checkpoint_every=4, learning_starts=2, batch_size=2)
    res = train(_env_factory(), cfg, tmp_path, "abc")
    assert [r["steps"] for r in res.log] == [4, 8, 10]
    assert all(set(r) == set(LOG_COLUMNS) for r in res.log)
    assert [s for s, _, _ in res.checkpoints] == [0, 4, 8, 10]
    net, meta = load_checkpoint(res.checkpoints[-1][1], expect_hash="abc")
    assert meta["step"] == 10
    for p, q in zip(net.params, res.agent.online.params):
        np.testing.assert_array_equal(p, q)


def test_training_is_deterministic():
    cfg = TrainConfig(total_steps=8, layers=SMALL, learning_starts=2, batch_size=4)
    a = train(_env_factory(), cfg)
    b = train(_env_factory(), cfg)
    assert a.log == b.log
    for p, q in zip(a.agent.online.params, b.agent.online.params):
        np.testing.assert_array_equal(p, q)


def test_fault_discards_episode(monkeypatch):
    made = []

    def factory():
        env = _env_factory()()
        orig_reset = env.reset

        def reset(seed):
            obs = orig_reset(seed)
            if not made:
                made.append(seed)

                def boom(perm=None):
                    raise SimulationFault("overlap", {"t": env.world.t})

                env.world.step = boom
            return obs

        env.reset = reset
        return env

    res = train(factory, TrainConfig(total_steps=6, layers=SMALL, learning_starts=100))
    assert len(res.faults) == 1 and res.faults[0]["episode"] == 0
    assert [r["episode"] for r in res.log] == [1, 2]
    assert res.log[-1]["steps"] == 6


def test_checkpoint_round_trip_and_hash_refusal(tmp_path):
    net = MLP(SMALL, np.random.default_rng(9))
    path = tmp_path / "c.npz"
    save_checkpoint(path, net, 123, config_hash({"a": 1}))
    back, meta = load_checkpoint(path, expect_hash=config_hash({"a": 1}))
    assert meta["step"] == 123 and tuple(meta["layers"]) == SMALL
    for p, q in zip(net.params, back.params):
        np.testing.assert_array_equal(p, q)
    with pytest.raises(ValueError, match="config hash"):
        load_checkpoint(path, expect_hash=config_hash({"a": 2}))


def test_config_hash_stable():
    assert config_hash({"b": 1, "a": (1, 2)}) == config_hash({"a": [1, 2], "b": 1})
    assert config_hash(TrainConfig()) != config_hash(TrainConfig(seed=1))
    assert episode_seed(0, 1) == episode_seed(0, 1) != episode_seed(0, 2)


@pytest.mark.slow
def test_pure_exploration_training_matches_baseline():
    # random gating over whole episodes, paired with all-allow episodes on the same seeds
    factory = _env_factory(steps=25, warmup=60.0, demand="high")
    cfg = TrainConfig(total_steps=25 * 12, eps_start=1.0, eps_end=1.0, layers=SMALL, learning_starts=10 ** 9)
    res = train(factory, cfg)
    base = []
    for row in res.log:
        env = factory()
        env.reset(episode_seed(cfg.seed, row["episode"]))
        rews = []
        while not env.done:
            rews.append(env.step(np.full((5, 10), 3))[1].mean())
        base.append(np.mean(rews))
    policy = np.array([r["mean_reward"] for r in res.log])
    diff = policy - np.array(base)
    assert abs(diff.mean()) < 0.02
    assert stats.ttest_1samp(diff, 0.0).pvalue > 0.01
