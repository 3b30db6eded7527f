"""Timing primitives for concurrent control.

A controller samples the world every H seconds but needs t_AS seconds to
pick an action, during which the previously commanded action keeps
executing.  Everything in this package is built on three small pieces:
a validated clock (TimeModel), linear command ramps (ActionTrajectory),
and a reference integrator with per-tick discounting (integrate).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

TIME_EPS = 1e-9


class ContractViolationError(ValueError):
    """An API precondition or data-format contract was broken."""


class NumericDivergenceError(ArithmeticError):
    """A simulation or optimizer produced non-finite values."""


def _check_divides(small: float, big: float, name: str) -> int:
    n = int(round(big / small))
    if n < 1 or abs(n * small - big) > TIME_EPS:
        raise ContractViolationError(
            f"{name}: {small} must evenly divide {big} (residual "
            f"{abs(n * small - big):.3e} exceeds {TIME_EPS})"
        )
    return n


@dataclass(frozen=True)
class TimeModel:
    """Clock for one control process.

    sampling_period: H, seconds between action captures.
    latency: t_AS, seconds spent selecting the next action.
    spillover: t_AS', execution time left over from the previous period.
    gamma: discount per sampling period.
    physics_dt: integrator tick, must evenly divide H and t_AS.
    """

    sampling_period: float
    latency: float = 0.0
    spillover: float = 0.0
    gamma: float = 0.99
    physics_dt: float = 1e-3

    def __post_init__(self):
        H = self.sampling_period
        if not (H > 0.0):
            raise ContractViolationError(f"sampling_period must be positive, got {H}")
        if not (0.0 <= self.latency < H):
            raise ContractViolationError(
                f"latency must lie in [0, H): got {self.latency} with H={H}"
            )
        if not (0.0 <= self.spillover < H):
            raise ContractViolationError(
                f"spillover must lie in [0, H): got {self.spillover} with H={H}"
            )
        if not (0.0 < self.gamma <= 1.0):
            raise ContractViolationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (self.physics_dt > 0.0):
            raise ContractViolationError(
                f"physics_dt must be positive, got {self.physics_dt}"
            )
        _check_divides(self.physics_dt, H, "physics_dt vs sampling_period")
        if self.latency > 0.0:
            _check_divides(self.physics_dt, self.latency, "physics_dt vs latency")

    @property
    def latency_fraction(self) -> float:
        """t_AS / H, the portion of a period consumed by action selection."""
        return self.latency / self.sampling_period

    @property
    def spillover_fraction(self) -> float:
        return self.spillover / self.sampling_period

    @property
    def ticks_per_period(self) -> int:
        return int(round(self.sampling_period / self.physics_dt))

    def with_latency(self, latency: float) -> "TimeModel":
        return dataclasses.replace(self, latency=latency)


def _as_vector(x, name: str) -> np.ndarray:
    v = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    if v.size == 0:
        raise ContractViolationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ContractViolationError(f"{name} must be finite, got {v}")
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class ActionTrajectory:
    """Linear ramp from start_value to target_value over ramp_duration seconds.

    The ramp starts at start_time and holds target_value forever after
    start_time + ramp_duration.  Querying before start_time is an error:
    a trajectory has no defined value before it exists.
    """

    start_value: np.ndarray
    target_value: np.ndarray
    start_time: float
    ramp_duration: float

    def __post_init__(self):
        object.__setattr__(self, "start_value", _as_vector(self.start_value, "start_value"))
        object.__setattr__(self, "target_value", _as_vector(self.target_value, "target_value"))
        if self.start_value.shape != self.target_value.shape:
            raise ContractViolationError(
                f"start_value shape {self.start_value.shape} != "
                f"target_value shape {self.target_value.shape}"
            )
        if not (self.ramp_duration > 0.0):
            raise ContractViolationError(
                f"ramp_duration must be positive, got {self.ramp_duration}"
            )

    def value(self, t: float) -> np.ndarray:
        if t < self.start_time - TIME_EPS:
            raise ContractViolationError(
                f"trajectory queried at t={t} before start_time={self.start_time}"
            )
        # times within the clock resolution of the ramp end count as
        # completed, so accumulated float drift in capture times cannot
        # leave a phantom sliver of the command unexecuted
        if t >= self.end_time - TIME_EPS:
            return self.target_value.copy()
        u = (t - self.start_time) / self.ramp_duration
        if u <= 0.0:
            return self.start_value.copy()
        return (1.0 - u) * self.start_value + u * self.target_value

    @property
    def end_time(self) -> float:
        return self.start_time + self.ramp_duration


def trajectory_value(traj: ActionTrajectory, t: float) -> np.ndarray:
    """Commanded actuator value of traj at absolute time t."""
    return traj.value(t)


@dataclass(frozen=True)
class ConcurrentTransition:
    """One capture-to-capture step of a concurrent control process.

    state/next_state are the assembled observation vectors handed to the
    learner; prev_action is the command still executing when state was
    captured; latency_fraction is t_AS/H for this step.
    """

    state: np.ndarray
    prev_action: np.ndarray
    action: np.ndarray
    latency_fraction: float
    spillover_fraction: float
    reward: float
    next_state: np.ndarray
    terminal: bool


class EnvDynamics:
    """Continuous-time dynamics ds = drift(s, a) dt + diffusion(s, a) dW.

    Subclasses override drift and reward; diffusion defaults to zero.
    Rewards are normalized so that holding r(s, a) for one full sampling
    period contributes at most 1 to the per-step return.
    """

    state_dim: int = 0
    action_dim: int = 0

    def drift(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diffusion(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return np.zeros(self.state_dim)

    def reward(self, state: np.ndarray, action: np.ndarray) -> float:
        raise NotImplementedError


def integrate(
    dyn: EnvDynamics,
    tm: TimeModel,
    state: np.ndarray,
    traj: ActionTrajectory,
    t0: float,
    t1: float,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, float]:
    """Advance dyn from t0 to t1 under traj with explicit Euler ticks.

    Returns (state at t1, discounted reward accumulated over [t0, t1)).
    Reward uses the left endpoint of each tick, weighted by
    gamma^((t_k - t0) / H) * dt / H, so a constant reward of 1 held for
    one sampling period integrates to ~1 and the accumulator composes
    across split points: R(t0,t2) = R(t0,t1) + gamma^((t1-t0)/H) R(t1,t2).
    """
    if t1 < t0 - TIME_EPS:
        raise ContractViolationError(f"integrate needs t1 >= t0, got [{t0}, {t1}]")
    dt = tm.physics_dt
    n = int(round((t1 - t0) / dt))
    if abs(n * dt - (t1 - t0)) > TIME_EPS:
        raise ContractViolationError(
            f"physics_dt={dt} must evenly divide the span [{t0}, {t1}]"
        )
    s = np.array(state, dtype=np.float64, copy=True).reshape(-1)
    H = tm.sampling_period
    acc = 0.0
    for k in range(n):
        t_k = t0 + k * dt
        a = traj.value(t_k)
        r = dyn.reward(s, a)
        acc += (tm.gamma ** (k * dt / H)) * r * (dt / H)
        s = s + dyn.drift(s, a) * dt
        if rng is not None:
            sigma = np.asarray(dyn.diffusion(s, a), dtype=np.float64)
            if np.any(sigma != 0.0):
                s = s + np.sqrt(dt) * sigma * rng.standard_normal(s.shape)
        if not (np.all(np.isfinite(s)) and np.isfinite(acc)):
            raise NumericDivergenceError(
                f"non-finite state or reward at tick {k} (t={t_k + dt:.6f})"
            )
    return s, acc
