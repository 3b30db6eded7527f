"""Value-based learners: replay, epsilon schedules, CEM, DQN, CEM-QL.

Two trainers share the plumbing here.  dqn_train runs epsilon-greedy
over a uniform action grid; cem_ql_train keeps the action continuous
and picks both behavior and bootstrap actions with the cross-entropy
method on Q(s, a).  Both are single-threaded and bit-reproducible for
a fixed (config, environment seed) pair.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContractViolationError, NumericDivergenceError
from .envs import ConcurrentEnv
from .nets import MlpQNetwork, sgd_step


# -- replay ----------------------------------------------------------------


@dataclass(frozen=True)
class ReplayItem:
    obs: np.ndarray
    action: np.ndarray | int
    reward: float
    next_obs: np.ndarray
    terminal: bool
    latency_fraction: float


class ReplayBuffer:
    """Fixed-capacity ring with uniform seeded sampling."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity <= 0:
            raise ContractViolationError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.rng = rng
        self._items: list[ReplayItem] = []
        self._head = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: ReplayItem) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._head] = item
            self._head = (self._head + 1) % self.capacity

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if not self._items:
            raise ContractViolationError("sample from empty buffer")
        return self.rng.integers(0, len(self._items), size=batch_size)

    def sample(self, batch_size: int) -> list[ReplayItem]:
        return [self._items[i] for i in self.sample_indices(batch_size)]


# -- schedules and grids ------------------------------------------------------


def epsilon_by_episode(episode: int, n_episodes: int, start: float = 1.0,
                       end: float = 0.05, frac: float = 0.3) -> float:
    """Linear start->end over the first `frac` of episodes, then flat."""
    ramp = max(1, int(round(frac * n_episodes)))
    if episode >= ramp:
        return end
    return start + (end - start) * (episode / ramp)


def action_grid(low, high, n_bins: int) -> np.ndarray:
    """Uniform per-dimension grid, cartesian product over dimensions."""
    low = np.asarray(low, dtype=np.float64).ravel()
    high = np.asarray(high, dtype=np.float64).ravel()
    if n_bins < 2:
        raise ContractViolationError(f"need >= 2 bins per dimension, got {n_bins}")
    axes = [np.linspace(low[d], high[d], n_bins) for d in range(low.size)]
    return np.array(list(itertools.product(*axes)), dtype=np.float64)


# -- cross-entropy method ------------------------------------------------------


@dataclass(frozen=True)
class CemConfig:
    """Sampling-based argmax over a box-bounded action space.

    Initial mean sits at the box midpoint with std = half the range.
    Elites from the previous iteration stay in the candidate pool, so
    the mean elite score never decreases and the returned action is the
    best sample seen overall, not the final mean.
    """

    n_iterations: int = 4
    population: int = 64
    elite_frac: float = 0.1
    std_floor: float = 1e-3

    def __post_init__(self):
        if self.n_iterations < 1 or self.population < 2:
            raise ContractViolationError("CEM needs >= 1 iteration and >= 2 samples")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ContractViolationError(f"elite_frac {self.elite_frac} outside (0, 1]")
        if self.std_floor <= 0.0:
            raise ContractViolationError("std_floor must be positive")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.elite_frac * self.population)))


def _cem_batch_core(score_rows, n_states: int, low, high, cem: CemConfig,
                    rng: np.random.Generator, trace: list | None = None):
    """Vectorized CEM over n_states independent problems.

    score_rows(rows, actions) scores `actions` (N, dim) against the
    state index in `rows` (N,).  Returns (best actions (n_states, dim),
    best scores (n_states,)).
    """
    low = np.asarray(low, dtype=np.float64).ravel()
    high = np.asarray(high, dtype=np.float64).ravel()
    dim = low.size
    mean = np.broadcast_to((low + high) / 2.0, (n_states, dim)).copy()
    std = np.broadcast_to((high - low) / 2.0, (n_states, dim)).copy()
    best_a = mean.copy()
    best_q = np.full(n_states, -np.inf)
    elites = None
    for _ in range(cem.n_iterations):
        samples = rng.normal(mean[:, None, :], std[:, None, :],
                             size=(n_states, cem.population, dim))
        np.clip(samples, low, high, out=samples)
        cand = samples if elites is None else np.concatenate([samples, elites], axis=1)
        n_cand = cand.shape[1]
        rows = np.repeat(np.arange(n_states), n_cand)
        scores = np.asarray(score_rows(rows, cand.reshape(-1, dim)),
                            dtype=np.float64).reshape(n_states, n_cand)
        if not np.all(np.isfinite(scores)):
            raise NumericDivergenceError("non-finite CEM scores")
        order = np.argsort(-scores, axis=1)[:, : cem.n_elite]
        take = np.arange(n_states)[:, None]
        elites = cand[take, order]
        elite_scores = scores[take, order]
        if trace is not None:
            trace.append(float(np.mean(elite_scores)))
        top_q = elite_scores[:, 0]
        better = top_q > best_q
        best_q = np.where(better, top_q, best_q)
        best_a[better] = elites[better, 0]
        mean = elites.mean(axis=1)
        std = np.maximum(elites.std(axis=1), cem.std_floor)
    return best_a, best_q


def cem_argmax(score_fn, low, high, cem: CemConfig, rng: np.random.Generator,
               trace: list | None = None) -> np.ndarray:
    """Best action found for a single scoring problem.

    score_fn takes a (N, action_dim) batch and returns (N,) scores.
    """
    best_a, _ = _cem_batch_core(lambda rows, acts: score_fn(acts), 1, low, high,
                                cem, rng, trace)
    return best_a[0]


def q_state_action(net: MlpQNetwork, obs_batch: np.ndarray,
                   act_batch: np.ndarray) -> np.ndarray:
    out = net.forward(np.concatenate([obs_batch, act_batch], axis=1))
    return out[:, 0]


def cem_actions(net: MlpQNetwork, states: np.ndarray, low, high,
                cem: CemConfig, rng: np.random.Generator):
    """CEM argmax of Q(s, .) for every row of `states`; returns (acts, scores)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))

    def score_rows(rows, acts):
        return q_state_action(net, states[rows], acts)

    return _cem_batch_core(score_rows, states.shape[0], low, high, cem, rng)


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 32
    gamma: float | None = None  # None: inherit the environment TimeModel
    buffer_capacity: int = 60_000
    warmup_transitions: int = 500
    target_sync_period: int = 200  # gradient steps between target refreshes
    train_every: int = 1  # environment steps per gradient step
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_frac: float = 0.3
    explore_hold: int = 1  # max steps a random action is held (1 = plain epsilon-greedy)
    n_action_bins: int = 5
    hidden: tuple = (64, 64)
    timestep_penalty: float = 0.0
    latency_discount: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.episodes <= 0 or self.batch_size <= 0:
            raise ContractViolationError("episodes and batch_size must be positive")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ContractViolationError(f"gamma {self.gamma} outside [0, 1]")
        for e in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= e <= 1.0:
                raise ContractViolationError(f"epsilon {e} outside [0, 1]")
        if self.train_every < 1 or self.target_sync_period < 1:
            raise ContractViolationError("train_every and target_sync_period must be >= 1")
        if self.explore_hold < 1:
            raise ContractViolationError("explore_hold must be >= 1")


@dataclass
class TrainResult:
    net: MlpQNetwork
    returns: list = field(default_factory=list)
    sim_durations: list = field(default_factory=list)
    completions: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    latencies: list = field(default_factory=list)
    gradient_steps: int = 0

    def final_stats(self, tail_frac: float = 0.1) -> dict:
        """Mean metrics over the last tail_frac of episodes."""
        n = max(1, int(round(tail_frac * len(self.returns))))
        return {
            "final_return": float(np.mean(self.returns[-n:])),
            "episode_sim_duration_s": float(np.mean(self.sim_durations[-n:])),
            "action_completion": float(np.mean(self.completions[-n:])),
        }


def _effective_gamma(gamma: float, latency_fractions: np.ndarray,
                     latency_discount: bool) -> np.ndarray:
    if not latency_discount:
        return np.full_like(latency_fractions, gamma)
    # explicit two-segment decomposition of the per-step discount
    return gamma ** latency_fractions * gamma ** (1.0 - latency_fractions)


def _episode_metrics(result: TrainResult, wrapper: ConcurrentEnv, ep_return: float,
                     n_steps: int, latency: float):
    result.returns.append(ep_return)
    result.sim_durations.append(wrapper.episode_sim_seconds)
    result.steps.append(n_steps)
    result.latencies.append(latency)
    # an episode that never commanded a change is vacuously complete
    result.completions.append(
        wrapper.action_completion() if wrapper.completion_history else 1.0
    )


def dqn_train(wrapper: ConcurrentEnv, cfg: TrainConfig) -> TrainResult:
    """Epsilon-greedy DQN over a discretized action grid.

    The TD target is y = r + p + gamma * (1 - terminal) * max_a' Q_target;
    p is the timestep penalty.  Raises NumericDivergenceError with the
    episode/step location if the loss leaves the reals.
    """
    if not 3 <= cfg.n_action_bins <= 8:
        raise ContractViolationError(
            f"discretization wants 3..8 bins per dimension, got {cfg.n_action_bins}"
        )
    env = wrapper.env
    grid = action_grid(env.action_low, env.action_high, cfg.n_action_bins)
    n_actions = grid.shape[0]
    gamma = wrapper.tm.gamma if cfg.gamma is None else cfg.gamma
    init_rng, policy_rng, buffer_rng = np.random.default_rng(cfg.seed).spawn(3)
    net = MlpQNetwork([wrapper.obs_dim, *cfg.hidden, n_actions], init_rng)
    target = net.clone()
    buf = ReplayBuffer(cfg.buffer_capacity, buffer_rng)
    result = TrainResult(net=net)
    warmup = max(cfg.warmup_transitions, cfg.batch_size)
    env_steps = 0
    for ep in range(cfg.episodes):
        eps = epsilon_by_episode(ep, cfg.episodes, cfg.epsilon_start,
                                 cfg.epsilon_end, cfg.epsilon_frac)
        obs, ep_info = wrapper.reset()
        ep_return = 0.0
        step_in_ep = 0
        hold_ai, hold_left = -1, 0
        while not wrapper.done:
            if hold_left > 0:
                ai = hold_ai
                hold_left -= 1
            elif policy_rng.uniform() < eps:
                ai = int(policy_rng.integers(n_actions))
                if cfg.explore_hold > 1:
                    # held random actions produce multi-step maneuvers
                    hold_ai = ai
                    hold_left = int(policy_rng.integers(1, cfg.explore_hold + 1)) - 1
            else:
                ai = int(np.argmax(net.forward(obs)))
            tr = wrapper.step(grid[ai])
            buf.add(ReplayItem(obs, ai, tr.reward, tr.next_state, tr.terminal,
                               tr.latency_fraction))
            ep_return += tr.reward
            obs = tr.next_state
            env_steps += 1
            step_in_ep += 1
            if len(buf) >= warmup and env_steps % cfg.train_every == 0:
                loss = _dqn_update(net, target, buf.sample(cfg.batch_size), gamma, cfg)
                if not math.isfinite(loss):
                    raise NumericDivergenceError(
                        f"non-finite loss {loss} at episode {ep} step {step_in_ep}"
                    )
                result.gradient_steps += 1
                if result.gradient_steps % cfg.target_sync_period == 0:
                    target = net.clone()
        _episode_metrics(result, wrapper, ep_return, step_in_ep, ep_info["latency"])
    return result


def _dqn_update(net, target, batch, gamma, cfg) -> float:
    obs = np.stack([b.obs for b in batch])
    acts = np.array([b.action for b in batch], dtype=np.intp)
    rew = np.array([b.reward for b in batch])
    nxt = np.stack([b.next_obs for b in batch])
    term = np.array([b.terminal for b in batch], dtype=np.float64)
    latf = np.array([b.latency_fraction for b in batch])
    g_eff = _effective_gamma(gamma, latf, cfg.latency_discount)
    y = rew + cfg.timestep_penalty + g_eff * (1.0 - term) * np.max(target.forward(nxt), axis=1)
    q_all, cache = net.forward_cached(obs)
    rows = np.arange(len(batch))
    diff = q_all[rows, acts] - y
    upstream = np.zeros_like(q_all)
    upstream[rows, acts] = 2.0 * diff / len(batch)
    gw, gb = net.backward(cache, upstream)
    sgd_step(net, gw, gb, cfg.learning_rate)
    return float(np.mean(diff ** 2))


def cem_ql_train(wrapper: ConcurrentEnv, cfg: TrainConfig,
                 cem: CemConfig = CemConfig()) -> TrainResult:
    """Continuous-action Q-learning with CEM action selection.

    Behavior policy: with probability epsilon a uniform random in-bounds
    action, otherwise CEM argmax of the online net.  Bootstrap action is
    the CEM argmax of the target net at the next state; terminal targets
    reduce to the (penalized) reward alone.
    """
    env = wrapper.env
    low, high = env.action_low, env.action_high
    gamma = wrapper.tm.gamma if cfg.gamma is None else cfg.gamma
    init_rng, policy_rng, buffer_rng, cem_rng = np.random.default_rng(cfg.seed).spawn(4)
    net = MlpQNetwork([wrapper.obs_dim + env.action_dim, *cfg.hidden, 1], init_rng)
    target = net.clone()
    buf = ReplayBuffer(cfg.buffer_capacity, buffer_rng)
    result = TrainResult(net=net)
    warmup = max(cfg.warmup_transitions, cfg.batch_size)
    env_steps = 0
    for ep in range(cfg.episodes):
        eps = epsilon_by_episode(ep, cfg.episodes, cfg.epsilon_start,
                                 cfg.epsilon_end, cfg.epsilon_frac)
        obs, ep_info = wrapper.reset()
        ep_return = 0.0
        step_in_ep = 0
        hold_act, hold_left = None, 0
        while not wrapper.done:
            if hold_left > 0:
                act = hold_act
                hold_left -= 1
            elif policy_rng.uniform() < eps:
                act = policy_rng.uniform(low, high)
                if cfg.explore_hold > 1:
                    hold_act = act
                    hold_left = int(policy_rng.integers(1, cfg.explore_hold + 1)) - 1
            else:
                acts, _ = cem_actions(net, obs[None, :], low, high, cem, cem_rng)
                act = acts[0]
            tr = wrapper.step(act)
            buf.add(ReplayItem(obs, np.asarray(act, dtype=np.float64), tr.reward,
                               tr.next_state, tr.terminal, tr.latency_fraction))
            ep_return += tr.reward
            obs = tr.next_state
            env_steps += 1
            step_in_ep += 1
            if len(buf) >= warmup and env_steps % cfg.train_every == 0:
                loss = _cem_ql_update(net, target, buf.sample(cfg.batch_size),
                                      gamma, cfg, cem, cem_rng, low, high)
                if not math.isfinite(loss):
                    raise NumericDivergenceError(
                        f"non-finite loss {loss} at episode {ep} step {step_in_ep}"
                    )
                result.gradient_steps += 1
                if result.gradient_steps % cfg.target_sync_period == 0:
                    target = net.clone()
        _episode_metrics(result, wrapper, ep_return, step_in_ep, ep_info["latency"])
    return result


def _cem_ql_update(net, target, batch, gamma, cfg, cem, cem_rng, low, high) -> float:
    obs = np.stack([b.obs for b in batch])
    acts = np.stack([b.action for b in batch])
    rew = np.array([b.reward for b in batch])
    nxt = np.stack([b.next_obs for b in batch])
    term = np.array([b.terminal for b in batch], dtype=np.float64)
    latf = np.array([b.latency_fraction for b in batch])
    boot_acts, _ = cem_actions(target, nxt, low, high, cem, cem_rng)
    q_next = q_state_action(target, nxt, boot_acts)
    g_eff = _effective_gamma(gamma, latf, cfg.latency_discount)
    y = rew + cfg.timestep_penalty + g_eff * (1.0 - term) * q_next
    q, cache = net.forward_cached(np.concatenate([obs, acts], axis=1))
    diff = q[:, 0] - y
    upstream = (2.0 * diff / len(batch))[:, None]
    gw, gb = net.backward(cache, upstream)
    sgd_step(net, gw, gb, cfg.learning_rate)
    return float(np.mean(diff ** 2))


# -- evaluation -----------------------------------------------------------------


def greedy_grid_policy(net: MlpQNetwork, grid: np.ndarray):
    def policy(obs):
        return grid[int(np.argmax(net.forward(obs)))]

    return policy


def greedy_cem_policy(net: MlpQNetwork, low, high, cem: CemConfig,
                      rng: np.random.Generator):
    def policy(obs):
        acts, _ = cem_actions(net, obs[None, :], low, high, cem, rng)
        return acts[0]

    return policy


def evaluate_policy(wrapper: ConcurrentEnv, policy, n_episodes: int) -> dict:
    """Greedy rollouts; means of return, sim duration, completion."""
    returns, durations, completions = [], [], []
    for _ in range(n_episodes):
        obs, _ = wrapper.reset()
        total = 0.0
        while not wrapper.done:
            tr = wrapper.step(policy(obs))
            total += tr.reward
            obs = tr.next_state
        returns.append(total)
        durations.append(wrapper.episode_sim_seconds)
        completions.append(
            wrapper.action_completion() if wrapper.completion_history else 1.0
        )
    return {
        "episodes": n_episodes,
        "mean_return": float(np.mean(returns)),
        "mean_episode_sim_duration_s": float(np.mean(durations)),
        "mean_action_completion": float(np.mean(completions)),
    }
