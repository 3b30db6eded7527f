"""Concurrent-knowledge observation features.

A controller that acts while its previous command is still executing
can be told what that command was (prev_action), how stale its
observation will be by the time the new command lands (t_AS), and how
much of the old command remains to run (vector-to-go).  This module
assembles those features, plus plain frame stacking, into a flat
observation vector with a layout fixed by configuration:

    [base_state, vtg?, prev_action?, t_as?, stacked_states, stacked_actions]

Stacks are most-recent-first and zero-filled at episode start.  VTG is
kept in raw action units (the remaining displacement itself, not a
normalized direction).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ActionTrajectory, ContractViolationError, trajectory_value

logger = logging.getLogger("concurq.features")

MAX_STACK = 4


@dataclass(frozen=True)
class FeatureConfig:
    use_vtg: bool = False
    use_prev_action: bool = False
    use_t_as: bool = False
    n_stack_states: int = 0
    n_stack_actions: int = 0
    t_as_bounds: tuple = (0.0, 0.05)

    def __post_init__(self):
        for name in ("n_stack_states", "n_stack_actions"):
            n = getattr(self, name)
            if not (0 <= n <= MAX_STACK):
                raise ContractViolationError(f"{name} must lie in [0, {MAX_STACK}], got {n}")
        lo, hi = self.t_as_bounds
        if not (lo < hi):
            raise ContractViolationError(f"t_as_bounds must satisfy min < max, got {self.t_as_bounds}")


def feature_dim(config: FeatureConfig, obs_dim: int, action_dim: int) -> int:
    d = obs_dim
    if config.use_vtg:
        d += action_dim
    if config.use_prev_action:
        d += action_dim
    if config.use_t_as:
        d += 1
    d += config.n_stack_states * obs_dim
    d += config.n_stack_actions * action_dim
    return d


def compute_vtg(prev_traj: ActionTrajectory, capture_time: float) -> np.ndarray:
    """Remaining commanded displacement at the capture instant.

    target minus the ramp's current value; exactly zero once the ramp
    has completed (endpoint exactness of the trajectory).
    """
    return prev_traj.target_value - trajectory_value(prev_traj, capture_time)


def normalize_t_as(t_as: float, bounds: tuple) -> float:
    """Map a latency in seconds onto [0, 1] using known bounds.

    Values outside the bounds violate the bounded-latency assumption;
    they are clamped and logged rather than raised, since a single
    straggler should not kill a training run.
    """
    lo, hi = bounds
    if not (lo < hi):
        raise ContractViolationError(f"t_as bounds must satisfy min < max, got {bounds}")
    if t_as < lo or t_as > hi:
        logger.warning(
            "t_AS %.6f s outside assumed bounds [%g, %g]; clamping", t_as, lo, hi
        )
    return float(np.clip((t_as - lo) / (hi - lo), 0.0, 1.0))


@dataclass
class FeatureRegisters:
    """Per-episode feature state owned by the environment wrapper.

    prev_traj is the trajectory executing at the current capture;
    capture_time is the absolute time of that capture; stacks hold the
    most recent base states / commands, newest last.
    """

    obs_dim: int
    action_dim: int
    prev_traj: ActionTrajectory | None = None
    capture_time: float = 0.0
    t_as_seconds: float = 0.0
    prev_command: np.ndarray = field(default_factory=lambda: np.zeros(0))
    state_stack: list = field(default_factory=list)
    action_stack: list = field(default_factory=list)

    def __post_init__(self):
        if self.prev_command.size == 0:
            self.prev_command = np.zeros(self.action_dim)

    def push(self, base_state: np.ndarray, command: np.ndarray) -> None:
        self.state_stack.append(np.asarray(base_state, dtype=np.float64))
        self.action_stack.append(np.asarray(command, dtype=np.float64))
        del self.state_stack[:-MAX_STACK]
        del self.action_stack[:-MAX_STACK]


def assemble(
    config: FeatureConfig, base_state: np.ndarray, regs: FeatureRegisters
) -> np.ndarray:
    """Flatten base state plus enabled features into one vector.

    Disabled features contribute zero dimensions.  Missing history
    (episode start) is zero-filled: VTG with no previous trajectory is
    zero, stacks shorter than requested are padded with zeros.
    """
    base = np.asarray(base_state, dtype=np.float64).reshape(-1)
    if base.shape[0] != regs.obs_dim:
        raise ContractViolationError(
            f"base state dim {base.shape[0]} != configured obs dim {regs.obs_dim}"
        )
    if regs.prev_command.shape[0] != regs.action_dim:
        raise ContractViolationError(
            f"prev_command dim {regs.prev_command.shape[0]} != action dim {regs.action_dim}"
        )
    parts = [base]
    if config.use_vtg:
        if regs.prev_traj is None:
            parts.append(np.zeros(regs.action_dim))
        else:
            vtg = compute_vtg(regs.prev_traj, regs.capture_time)
            if vtg.shape[0] != regs.action_dim:
                raise ContractViolationError(
                    f"vtg dim {vtg.shape[0]} != action dim {regs.action_dim}"
                )
            parts.append(vtg)
    if config.use_prev_action:
        parts.append(regs.prev_command)
    if config.use_t_as:
        parts.append(np.array([normalize_t_as(regs.t_as_seconds, config.t_as_bounds)]))
    for n, stack, dim in (
        (config.n_stack_states, regs.state_stack, regs.obs_dim),
        (config.n_stack_actions, regs.action_stack, regs.action_dim),
    ):
        for i in range(1, n + 1):
            if i <= len(stack):
                item = stack[-i]
                if item.shape[0] != dim:
                    raise ContractViolationError(
                        f"stacked item dim {item.shape[0]} != expected {dim}"
                    )
                parts.append(item)
            else:
                parts.append(np.zeros(dim))
    out = np.concatenate(parts)
    expect = feature_dim(config, regs.obs_dim, regs.action_dim)
    if out.shape[0] != expect:
        raise ContractViolationError(
            f"assembled dim {out.shape[0]} != configured dim {expect}"
        )
    return out
