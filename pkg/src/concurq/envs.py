"""Toy control tasks and the concurrent-execution wrapper.

Three self-contained environments (pendulum swing-up, cartpole
swing-up, 2-D pointmass reaching) run under a wrapper that injects
action-selection latency: in concurrent mode the previous command's
ramp keeps executing for the first t_AS seconds of every step while
the new command is "being computed", then the new ramp takes over.  In
blocking mode the world instead freezes during selection (latency is
charged to the episode clock but not simulated) and every commanded
ramp runs to completion before the next capture.

Angle conventions: theta is measured from upright, wrapped to
(-pi, pi]; hanging rest is theta = +-pi.  Rewards are in [0, 1] per
step.  Pendulum and cartpole integrate with semi-implicit Euler, which
keeps the undamped pendulum's energy drift around 0.01% over 10 s at
dt = 1e-3 (explicit Euler gains several percent, violating the energy
sanity bound).  The pointmass is kinematic: its position IS the
commanded ramp value, clamped to the unit square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ActionTrajectory,
    ConcurrentTransition,
    ContractViolationError,
    NumericDivergenceError,
    TimeModel,
)
from .features import FeatureConfig, FeatureRegisters, assemble, feature_dim


def _wrap_angle(theta: float) -> float:
    # into (-pi, pi]
    w = math.remainder(theta, math.tau)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    torque_limit: float = 2.0
    damping: float = 0.01


@dataclass(frozen=True)
class CartpoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_limit: float = 10.0
    track_limit: float = 2.4
    gravity: float = 9.81


@dataclass(frozen=True)
class PointmassParams:
    max_step: float = 0.2  # per-command displacement clamp, inf-norm
    goal: tuple = (0.5, 0.5)
    reward_width: float = 0.5  # inf-norm distance at which reward hits zero
    start_clearance: float = 0.15  # resets start at least this far from the goal


class ToyEnv:
    """Environment contract consumed by ConcurrentEnv.

    tick(state, action_value, dt) advances one physics tick; for
    kinematic envs the action_value passed in is the ramp value at the
    END of the tick and becomes the new state directly.
    make_target(current, command) maps a commanded action onto the ramp
    target given the actuator's current value.
    """

    name: str = ""
    obs_dim: int = 0
    action_dim: int = 0
    horizon: int = 0
    kinematic: bool = False
    action_low: np.ndarray
    action_high: np.ndarray

    def reset_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tick(self, state: np.ndarray, action_value: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError

    def reward(self, state: np.ndarray, action_value: np.ndarray) -> float:
        raise NotImplementedError

    def terminal(self, state: np.ndarray) -> bool:
        return False

    def make_target(self, current: np.ndarray, command: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PendulumSwingUp(ToyEnv):
    """Torque-limited pendulum; swing up from hanging and hold upright.

    theta'' = (g/l) sin(theta) + u/(m l^2) - damping * theta',
    torque commands are absolute targets reached through a ramp.
    The torque limit (2.0 < m g l) forces energy pumping.
    """

    name = "pendulum"
    obs_dim = 3
    action_dim = 1
    horizon = 120

    def __init__(self, params: PendulumParams = PendulumParams(), horizon: int | None = None):
        self.params = params
        if horizon is not None:
            self.horizon = int(horizon)
        lim = params.torque_limit
        self.action_low = np.array([-lim])
        self.action_high = np.array([lim])

    def reset_state(self, rng: np.random.Generator) -> np.ndarray:
        theta = _wrap_angle(math.pi + rng.uniform(-0.1, 0.1))
        theta_dot = rng.uniform(-0.05, 0.05)
        return np.array([theta, theta_dot])

    def observe(self, state: np.ndarray) -> np.ndarray:
        th, thd = state
        return np.array([math.cos(th), math.sin(th), thd])

    def tick(self, state, action_value, dt):
        p = self.params
        th = float(state[0])
        thd = float(state[1])
        u = float(action_value[0])
        acc = (p.gravity / p.length) * math.sin(th) + u / (p.mass * p.length ** 2) - p.damping * thd
        thd = thd + acc * dt
        th = _wrap_angle(th + thd * dt)
        return np.array([th, thd])

    def reward(self, state, action_value):
        return 0.5 * (1.0 + math.cos(float(state[0])))

    def make_target(self, current, command):
        return np.clip(command, self.action_low, self.action_high)

    def mechanical_energy(self, state) -> float:
        p = self.params
        th, thd = float(state[0]), float(state[1])
        return 0.5 * p.mass * p.length ** 2 * thd ** 2 + p.mass * p.gravity * p.length * math.cos(th)


class CartpoleSwingUp(ToyEnv):
    """Cart on a bounded track with a hanging pole to swing upright.

    Standard rigid cart-pole equations (frictionless track, uniform
    pole); episode ends when the cart leaves the track.
    """

    name = "cartpole"
    obs_dim = 5
    action_dim = 1
    horizon = 120

    def __init__(self, params: CartpoleParams = CartpoleParams(), horizon: int | None = None):
        self.params = params
        if horizon is not None:
            self.horizon = int(horizon)
        lim = params.force_limit
        self.action_low = np.array([-lim])
        self.action_high = np.array([lim])

    def reset_state(self, rng):
        theta = _wrap_angle(math.pi + rng.uniform(-0.1, 0.1))
        return np.array([rng.uniform(-0.05, 0.05), 0.0, theta, rng.uniform(-0.05, 0.05)])

    def observe(self, state):
        x, xd, th, thd = state
        return np.array([x, xd, math.cos(th), math.sin(th), thd])

    def tick(self, state, action_value, dt):
        p = self.params
        x, xd, th, thd = (float(v) for v in state)
        force = float(action_value[0])
        total = p.cart_mass + p.pole_mass
        sin, cos = math.sin(th), math.cos(th)
        temp = (force + p.pole_mass * p.pole_half_length * thd * thd * sin) / total
        th_acc = (p.gravity * sin - cos * temp) / (
            p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total)
        )
        x_acc = temp - p.pole_mass * p.pole_half_length * th_acc * cos / total
        thd = thd + th_acc * dt
        xd = xd + x_acc * dt
        th = _wrap_angle(th + thd * dt)
        x = x + xd * dt
        return np.array([x, xd, th, thd])

    def reward(self, state, action_value):
        return 0.5 * (1.0 + math.cos(float(state[2])))

    def terminal(self, state):
        return abs(float(state[0])) > self.params.track_limit

    def make_target(self, current, command):
        return np.clip(command, self.action_low, self.action_high)


class PointmassReach(ToyEnv):
    """Kinematic 2-D pointmass in the unit square homing on a goal point.

    Commands are displacement increments (inf-norm clamp); the position
    tracks the commanded ramp exactly, clamped to the square after
    every tick.  Reward falls off linearly with inf-norm distance from
    the goal, 1 at the goal and 0 beyond reward_width, and episodes
    run the full horizon: the task is to get close fast and hold.
    """

    name = "pointmass"
    obs_dim = 2
    action_dim = 2
    horizon = 50
    kinematic = True

    def __init__(self, params: PointmassParams = PointmassParams(), horizon: int | None = None):
        self.params = params
        if horizon is not None:
            self.horizon = int(horizon)
        self.action_low = np.full(2, -params.max_step)
        self.action_high = np.full(2, params.max_step)

    def _goal_dist(self, state) -> float:
        g = np.asarray(self.params.goal)
        return float(np.max(np.abs(state - g)))

    def reset_state(self, rng):
        # uniform over the square, excluding a clearance zone around the
        # goal so every episode requires actual travel
        while True:
            p = rng.uniform(0.0, 1.0, size=2)
            if self._goal_dist(p) >= self.params.start_clearance:
                return p

    def observe(self, state):
        return np.asarray(state, dtype=np.float64).copy()

    def tick(self, state, action_value, dt):
        return np.clip(action_value, 0.0, 1.0)

    def reward(self, state, action_value):
        return max(0.0, 1.0 - self._goal_dist(state) / self.params.reward_width)

    def terminal(self, state):
        return False

    def make_target(self, current, command):
        return current + np.clip(command, self.action_low, self.action_high)


_ENVS = {
    "pendulum": PendulumSwingUp,
    "cartpole": CartpoleSwingUp,
    "pointmass": PointmassReach,
}


def make_env(name: str, horizon: int | None = None) -> ToyEnv:
    if name not in _ENVS:
        raise ContractViolationError(f"unknown env {name!r}, have {sorted(_ENVS)}")
    return _ENVS[name](horizon=horizon)


LATENCY_MENU = (0.0, 0.005, 0.010, 0.025, 0.050)
EXTRA_MENU = (0.0, 0.005, 0.025, 0.050)


@dataclass(frozen=True)
class ConcurrentWrapperConfig:
    execution_mode: str = "concurrent"  # or "blocking"
    latency_schedule: str = "fixed"  # or "per_episode"
    latency: float = 0.0  # used by the fixed schedule
    latency_set: tuple = LATENCY_MENU  # drawn from by per_episode
    action_execution_extra: float = 0.0
    reward_mode: str = "integrated"  # or "point"

    def __post_init__(self):
        if self.execution_mode not in ("concurrent", "blocking"):
            raise ContractViolationError(f"execution_mode {self.execution_mode!r}")
        if self.latency_schedule not in ("fixed", "per_episode"):
            raise ContractViolationError(f"latency_schedule {self.latency_schedule!r}")
        if self.reward_mode not in ("integrated", "point"):
            raise ContractViolationError(f"reward_mode {self.reward_mode!r}")
        if self.action_execution_extra < 0.0:
            raise ContractViolationError("action_execution_extra must be >= 0")
        for l in (self.latency, *self.latency_set):
            if l < 0.0:
                raise ContractViolationError(f"negative latency {l}")


def action_completion(history) -> float:
    """Mean executed/commanded displacement ratio over recorded steps.

    history holds (executed_norm, commanded_norm) pairs; zero-command
    steps are skipped.  An empty history (or all-zero commands) means
    the metric is undefined and raises.
    """
    ratios = [ex / cmd for ex, cmd in history if cmd > 0.0]
    if not ratios:
        raise ContractViolationError("action_completion needs at least one nonzero-command step")
    return float(np.mean(ratios))


class ConcurrentEnv:
    """Injects selection latency and ramp execution around a ToyEnv.

    Owns the episode clock, the executing trajectory, the feature
    registers, and one RNG; identical (env, config, seed) reproduce
    identical trajectories bit for bit.
    """

    def __init__(
        self,
        env: ToyEnv,
        tm: TimeModel,
        config: ConcurrentWrapperConfig = ConcurrentWrapperConfig(),
        features: FeatureConfig = FeatureConfig(),
        seed: int = 0,
    ):
        self.env = env
        self.tm = tm
        self.config = config
        self.features = features
        self.rng = np.random.default_rng(seed)
        H, dt = tm.sampling_period, tm.physics_dt
        for l in {config.latency, *config.latency_set}:
            if l + config.action_execution_extra >= H:
                raise ContractViolationError(
                    f"latency {l} + extra {config.action_execution_extra} must stay below H={H}"
                )
            # constructing a TimeModel validates tick divisibility
            tm.with_latency(l)
        n_extra = round(config.action_execution_extra / dt)
        if abs(n_extra * dt - config.action_execution_extra) > 1e-9:
            raise ContractViolationError("action_execution_extra must be a multiple of physics_dt")
        self.obs_dim = feature_dim(features, env.obs_dim, env.action_dim)
        self._state = None
        self._alive = False

    # -- episode plumbing ---------------------------------------------------

    def _draw_latency(self) -> float:
        if self.config.latency_schedule == "fixed":
            return self.config.latency
        return float(self.rng.choice(np.asarray(self.config.latency_set)))

    def _initial_actuator(self, state) -> np.ndarray:
        if self.env.kinematic:
            return np.asarray(state, dtype=np.float64).copy()
        return np.zeros(self.env.action_dim)

    def reset(self) -> tuple:
        """Start a new episode; returns (augmented obs, info).

        info carries the episode's drawn latency in seconds.  The
        latency is drawn in blocking mode too (same RNG stream as
        concurrent, it just becomes a stall charge instead of simulated
        drift).
        """
        self._episode_latency = self._draw_latency()
        self._state = self.env.reset_state(self.rng)
        self._t = 0.0
        self._steps = 0
        self._sim_seconds = 0.0
        self.completion_history = []
        v0 = self._initial_actuator(self._state)
        self._traj = ActionTrajectory(v0, v0, 0.0, self.tm.sampling_period)
        self._regs = FeatureRegisters(self.env.obs_dim, self.env.action_dim)
        self._regs.prev_traj = self._traj
        self._regs.capture_time = 0.0
        self._regs.t_as_seconds = 0.0  # zero-filled at episode start
        self._alive = True
        self._terminal = False
        self._obs = assemble(self.features, self.env.observe(self._state), self._regs)
        return self._obs.copy(), {"latency": self._episode_latency}

    @property
    def done(self) -> bool:
        return (not self._alive) or self._terminal or self._steps >= self.env.horizon

    @property
    def episode_sim_seconds(self) -> float:
        return self._sim_seconds

    def action_completion(self) -> float:
        return action_completion(self.completion_history)

    # -- physics ------------------------------------------------------------

    def _advance(self, state, traj, t0: float, n_ticks: int, base_t: float):
        """n_ticks of physics under traj; reward discounted to base_t."""
        env, tm = self.env, self.tm
        dt, H, gamma = tm.physics_dt, tm.sampling_period, tm.gamma
        acc = 0.0
        offset = t0 - base_t
        for k in range(n_ticks):
            tk = t0 + k * dt
            a = traj.value(tk + dt) if env.kinematic else traj.value(tk)
            acc += (gamma ** ((offset + k * dt) / H)) * env.reward(state, a) * (dt / H)
            state = env.tick(state, a, dt)
        if not (np.all(np.isfinite(state)) and math.isfinite(acc)):
            raise NumericDivergenceError(
                f"non-finite state after {n_ticks} ticks from t={t0:.6f}"
            )
        return state, acc

    def step(self, command) -> ConcurrentTransition:
        """One capture-to-capture step under the commanded action."""
        if not self._alive:
            raise ContractViolationError("step before reset")
        if self.done:
            raise ContractViolationError("step on a finished episode")
        cmd = np.clip(
            np.asarray(command, dtype=np.float64).reshape(-1),
            self.env.action_low,
            self.env.action_high,
        )
        if cmd.shape[0] != self.env.action_dim:
            raise ContractViolationError(
                f"command dim {cmd.shape[0]} != action dim {self.env.action_dim}"
            )
        tm, env, cfg = self.tm, self.env, self.config
        H, dt = tm.sampling_period, tm.physics_dt
        blocking = cfg.execution_mode == "blocking"
        t = self._t
        t_as = 0.0 if blocking else self._episode_latency
        obs_before = self._obs
        prev_cmd_before = self._regs.prev_command.copy()
        state = self._state

        # latency segment: the old ramp keeps executing
        n_lat = round(t_as / dt)
        state, r_lat = self._advance(state, self._traj, t, n_lat, t)

        # switch to the new ramp at the actuator's current value
        switch_t = t + t_as
        v_switch = self._traj.value(switch_t)
        state_switch = state
        target = env.make_target(v_switch, cmd)
        ramp = ActionTrajectory(v_switch, target, switch_t, H + cfg.action_execution_extra)

        # remainder: blocking runs the ramp to completion, concurrent
        # stops at the next capture and lets the ramp roll over
        capture_t = switch_t + ramp.ramp_duration if blocking else t + H
        n_rem = round((capture_t - switch_t) / dt)
        state, r_rem = self._advance(state, ramp, switch_t, n_rem, t)

        if cfg.reward_mode == "point":
            reward = env.reward(state, ramp.value(capture_t))
        else:
            reward = r_lat + r_rem

        commanded = float(np.linalg.norm(target - v_switch))
        if env.kinematic:
            executed = float(np.linalg.norm(state - state_switch))
        else:
            executed = float(np.linalg.norm(ramp.value(capture_t) - v_switch))
        if commanded > 0.0:
            self.completion_history.append((executed, commanded))

        stall = self._episode_latency if blocking else 0.0
        self._sim_seconds += (capture_t - t) + stall

        self._terminal = env.terminal(state)
        self._steps += 1
        self._state = state
        self._t = capture_t
        self._traj = ramp
        self._regs.push(obs_before[: env.obs_dim], cmd)
        self._regs.prev_command = cmd
        self._regs.prev_traj = ramp
        self._regs.capture_time = capture_t
        self._regs.t_as_seconds = t_as
        self._obs = assemble(self.features, env.observe(state), self._regs)

        spill = max(0.0, (switch_t + ramp.ramp_duration) - capture_t)
        return ConcurrentTransition(
            state=obs_before,
            prev_action=prev_cmd_before,
            action=cmd.copy(),
            latency_fraction=t_as / H,
            spillover_fraction=spill / H,
            reward=float(reward),
            next_state=self._obs.copy(),
            terminal=bool(self._terminal),
        )


def run_episode(wrapper: ConcurrentEnv, policy, max_steps: int | None = None):
    """Roll one episode under policy(obs) -> command; returns transitions."""
    obs, _ = wrapper.reset()
    out = []
    steps = 0
    while not wrapper.done:
        tr = wrapper.step(policy(obs))
        out.append(tr)
        obs = tr.next_state
        steps += 1
        if max_steps is not None and steps >= max_steps:
            break
    return out
