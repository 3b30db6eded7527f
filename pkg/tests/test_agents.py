import numpy as np
import pytest

from concurq.agents import (
    CemConfig,
    ReplayBuffer,
    ReplayItem,
    TrainConfig,
    _cem_ql_update,
    _dqn_update,
    _effective_gamma,
    action_grid,
    cem_actions,
    cem_argmax,
    cem_ql_train,
    dqn_train,
    epsilon_by_episode,
    evaluate_policy,
    greedy_grid_policy,
)
from concurq.core import ContractViolationError, TimeModel
from concurq.envs import ConcurrentEnv, ConcurrentWrapperConfig, make_env
from concurq.features import FeatureConfig
from concurq.nets import MlpQNetwork


def _item(obs, action, reward, next_obs, terminal, latf=0.0):
    return ReplayItem(np.asarray(obs, dtype=np.float64), action, reward,
                      np.asarray(next_obs, dtype=np.float64), terminal, latf)


def _wrapper(name="pendulum", mode="blocking", latency=0.05, seed=0,
             features=FeatureConfig(), gamma=0.99):
    tm = TimeModel(sampling_period=0.1, gamma=gamma, physics_dt=0.01)
    cfg = ConcurrentWrapperConfig(execution_mode=mode, latency_schedule="fixed",
                                  latency=latency, latency_set=(latency,))
    return ConcurrentEnv(make_env(name), tm, cfg, features, seed=seed)


class TestReplay:
    def test_ring_respects_capacity(self):
        buf = ReplayBuffer(5, np.random.default_rng(0))
        for i in range(12):
            buf.add(_item([i], 0, float(i), [i], False))
        assert len(buf) == 5
        kept = sorted(b.reward for b in buf._items)
        assert kept == [7.0, 8.0, 9.0, 10.0, 11.0]

    def test_rejects_nonpositive_capacity(self):
        with pytest.raises(ContractViolationError):
            ReplayBuffer(0, np.random.default_rng(0))

    def test_sample_from_empty_rejected(self):
        buf = ReplayBuffer(4, np.random.default_rng(0))
        with pytest.raises(ContractViolationError):
            buf.sample(2)

    def test_index_sequence_deterministic(self):
        runs = []
        for _ in range(2):
            buf = ReplayBuffer(100, np.random.default_rng(42))
            for i in range(50):
                buf.add(_item([i], 0, 0.0, [i], False))
            runs.append([buf.sample_indices(8).tolist() for _ in range(5)])
        assert runs[0] == runs[1]


class TestSchedulesAndGrids:
    def test_epsilon_endpoints(self):
        assert epsilon_by_episode(0, 100) == 1.0
        assert epsilon_by_episode(30, 100) == 0.05
        assert epsilon_by_episode(99, 100) == 0.05

    def test_epsilon_linear_midpoint(self):
        # ramp covers 30 episodes; halfway sits halfway down
        assert epsilon_by_episode(15, 100) == pytest.approx((1.0 + 0.05) / 2)

    def test_epsilon_short_runs(self):
        assert epsilon_by_episode(0, 1) == 1.0
        assert epsilon_by_episode(1, 1) == 0.05

    def test_action_grid_1d(self):
        g = action_grid([-2.0], [2.0], 5)
        assert g.shape == (5, 1)
        np.testing.assert_allclose(g[:, 0], [-2, -1, 0, 1, 2])

    def test_action_grid_cartesian(self):
        g = action_grid([-1.0, 0.0], [1.0, 2.0], 3)
        assert g.shape == (9, 2)
        assert [tuple(r) for r in g[:3]] == [(-1, 0), (-1, 1), (-1, 2)]

    def test_action_grid_rejects_single_bin(self):
        with pytest.raises(ContractViolationError):
            action_grid([-1.0], [1.0], 1)


class TestCem:
    low = np.array([-1.0])
    high = np.array([1.0])

    def test_config_validation(self):
        with pytest.raises(ContractViolationError):
            CemConfig(elite_frac=0.0)
        with pytest.raises(ContractViolationError):
            CemConfig(population=1)
        with pytest.raises(ContractViolationError):
            CemConfig(std_floor=0.0)
        assert CemConfig(population=10, elite_frac=0.01).n_elite == 1

    def test_recovers_quadratic_argmax(self):
        cem = CemConfig()
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            a = cem_argmax(lambda A: -(A[:, 0] - 0.3) ** 2, self.low, self.high, cem, rng)
            assert abs(a[0] - 0.3) <= 1e-2

    def test_result_stays_in_bounds(self):
        cem = CemConfig()
        rng = np.random.default_rng(3)
        a = cem_argmax(lambda A: np.zeros(A.shape[0]), self.low, self.high, cem, rng)
        assert -1.0 <= a[0] <= 1.0
        # optimum outside the box clamps to the boundary
        lo2, hi2 = np.array([-0.2, -0.2]), np.array([0.2, 0.2])
        a2 = cem_argmax(lambda A: -np.sum((A - np.array([0.5, -0.5])) ** 2, axis=1),
                        lo2, hi2, CemConfig(), np.random.default_rng(9))
        np.testing.assert_allclose(a2, [0.2, -0.2])

    def test_elite_mean_monotone(self):
        for seed in range(10):
            trace = []
            cem_argmax(lambda A: -np.sum((A - 0.2) ** 2, axis=1), self.low, self.high,
                       CemConfig(), np.random.default_rng(seed), trace=trace)
            assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))

    def test_beats_uniform_random_search(self):
        cem = CemConfig()
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(2000 + seed)
            f = lambda A: -(A[:, 0] - 0.3) ** 2 * np.cos(3 * A[:, 0])
            a = cem_argmax(f, self.low, self.high, cem, rng)
            rs = rng.uniform(self.low, self.high, size=(1000, 1))
            wins += f(a[None, :])[0] >= np.max(f(rs))
        assert wins >= 9

    def test_batch_rows_solve_their_own_problems(self):
        # Q(s, a) = -(a - s)^2 on the net-free scorer: each row's argmax is its state
        targets = np.array([[-0.5], [0.0], [0.4]])

        class FakeNet:
            def forward(self, x):
                s, a = x[:, :1], x[:, 1:]
                return -((a - s) ** 2)

        acts, scores = cem_actions(FakeNet(), targets, self.low, self.high,
                                   CemConfig(), np.random.default_rng(11))
        np.testing.assert_allclose(acts, targets, atol=1e-2)
        assert np.all(scores > -1e-3)


class TestTrainConfigValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ContractViolationError):
            TrainConfig(episodes=0)
        with pytest.raises(ContractViolationError):
            TrainConfig(gamma=1.5)
        with pytest.raises(ContractViolationError):
            TrainConfig(epsilon_start=1.2)
        with pytest.raises(ContractViolationError):
            TrainConfig(train_every=0)

    def test_dqn_enforces_bin_range(self):
        w = _wrapper()
        for bins in (2, 9):
            with pytest.raises(ContractViolationError):
                dqn_train(w, TrainConfig(episodes=1, n_action_bins=bins))


class TestUpdateRules:
    def test_effective_gamma_decomposition_matches_scalar(self):
        latf = np.array([0.0, 0.25, 0.5, 0.9])
        np.testing.assert_allclose(_effective_gamma(0.9, latf, True), 0.9)
        np.testing.assert_allclose(_effective_gamma(0.9, latf, False), 0.9)

    def test_dqn_terminal_target_is_reward_alone(self):
        # zero net: one update moves only the output bias, by 2*lr*y/B per hit
        cfg = TrainConfig(episodes=1, learning_rate=0.01, batch_size=1)
        net = MlpQNetwork([2, 4, 3], np.random.default_rng(0))
        net.set_flat(np.zeros(net.n_params))
        target = net.clone()
        target.biases[-1][:] = 5.0  # would leak into y if the mask failed
        batch = [_item([0.1, 0.2], 1, 0.7, [0.3, 0.4], True)]
        _dqn_update(net, target, batch, gamma=0.99, cfg=cfg)
        q = net.forward(np.array([0.5, 0.5]))
        assert q[1] == pytest.approx(2 * 0.01 * 0.7, abs=1e-12)
        assert q[0] == 0.0 and q[2] == 0.0

    def test_cem_ql_terminal_target_is_reward_alone(self):
        cfg = TrainConfig(episodes=1, learning_rate=0.01, batch_size=1)
        net = MlpQNetwork([3, 4, 1], np.random.default_rng(0))  # 2 obs + 1 action
        net.set_flat(np.zeros(net.n_params))
        target = net.clone()
        target.biases[-1][:] = 5.0
        batch = [_item([0.1, 0.2], np.array([0.3]), 0.7, [0.3, 0.4], True)]
        _cem_ql_update(net, target, batch, gamma=0.99, cfg=cfg, cem=CemConfig(),
                       cem_rng=np.random.default_rng(1),
                       low=np.array([-1.0]), high=np.array([1.0]))
        q = net.forward(np.array([0.0, 0.0, 0.0]))
        assert q[0] == pytest.approx(2 * 0.01 * 0.7, abs=1e-12)

    def test_dqn_nonterminal_bootstraps_target_max(self):
        cfg = TrainConfig(episodes=1, learning_rate=0.01, batch_size=1)
        net = MlpQNetwork([2, 4, 3], np.random.default_rng(0))
        net.set_flat(np.zeros(net.n_params))
        target = net.clone()
        target.biases[-1][:] = np.array([1.0, 5.0, 2.0])
        batch = [_item([0.1, 0.2], 0, 0.5, [0.3, 0.4], False)]
        _dqn_update(net, target, batch, gamma=0.9, cfg=cfg)
        y = 0.5 + 0.9 * 5.0
        assert net.forward(np.array([0.0, 0.0]))[0] == pytest.approx(2 * 0.01 * y, abs=1e-12)


class TestTrainingLoops:
    def test_dqn_smoke_and_reproducibility(self):
        cfg = TrainConfig(episodes=6, warmup_transitions=100, seed=3)
        runs = []
        for _ in range(2):
            res = dqn_train(_wrapper(seed=3), cfg)
            assert len(res.returns) == 6
            assert len(res.sim_durations) == 6
            assert all(0.0 <= c <= 1.0 + 1e-9 for c in res.completions)
            assert res.gradient_steps > 0
            runs.append(res.returns)
        assert runs[0] == runs[1]

    def test_dqn_gamma_zero_learns_immediate_reward(self):
        # with no bootstrap the fitted Q on visited pairs approaches r
        cfg = TrainConfig(episodes=60, gamma=0.0, epsilon_start=1.0, epsilon_end=1.0,
                          warmup_transitions=64, learning_rate=5e-3, seed=5)
        w = _wrapper(seed=5)
        res = dqn_train(w, cfg)
        grid = action_grid(w.env.action_low, w.env.action_high, cfg.n_action_bins)
        probe = _wrapper(seed=11)
        errs = []
        obs, _ = probe.reset()
        rng = np.random.default_rng(2)
        while not probe.done:
            ai = int(rng.integers(len(grid)))
            tr = probe.step(grid[ai])
            errs.append(abs(res.net.forward(obs)[ai] - tr.reward))
            obs = tr.next_state
        assert float(np.mean(errs)) < 0.06

    def test_cem_ql_smoke_and_reproducibility(self):
        cfg = TrainConfig(episodes=4, warmup_transitions=50, seed=7,
                          timestep_penalty=-0.01)
        runs = []
        for _ in range(2):
            res = cem_ql_train(_wrapper("pointmass", seed=7), cfg)
            assert len(res.returns) == 4
            assert res.gradient_steps > 0
            runs.append(res.returns)
        assert runs[0] == runs[1]

    def test_final_stats_tail_mean(self):
        from concurq.agents import TrainResult

        res = TrainResult(net=None, returns=list(range(10)),
                          sim_durations=[1.0] * 10, completions=[0.5] * 10)
        stats = res.final_stats()
        assert stats["final_return"] == 9.0  # last 10% of 10 episodes = 1 episode
        assert stats["episode_sim_duration_s"] == 1.0

    def test_evaluate_policy_deterministic(self):
        res = dqn_train(_wrapper(seed=1), TrainConfig(episodes=3, warmup_transitions=50, seed=1))
        grid = action_grid([-2.0], [2.0], 5)
        pol = greedy_grid_policy(res.net, grid)
        m1 = evaluate_policy(_wrapper(seed=9), pol, n_episodes=2)
        m2 = evaluate_policy(_wrapper(seed=9), pol, n_episodes=2)
        assert m1 == m2
        assert set(m1) == {"episodes", "mean_return", "mean_episode_sim_duration_s",
                           "mean_action_completion"}
