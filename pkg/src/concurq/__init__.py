"""Q-learning and simulation tools for concurrent control.

Concurrent here means the action for step t+1 is selected while the
action for step t is still executing, so the policy acts on stale
state.  The package provides the time bookkeeping, tabular operators
with contraction certificates, conditioning features (vector-to-go,
previous action, selection time), toy environments behind a
latency-injecting wrapper, small from-scratch Q-learners, and a
deterministic sweep harness.
"""

from .agents import (
    CemConfig,
    ReplayBuffer,
    ReplayItem,
    TrainConfig,
    TrainResult,
    action_grid,
    cem_argmax,
    cem_ql_train,
    dqn_train,
    evaluate_policy,
    greedy_cem_policy,
    greedy_grid_policy,
)
from .core import (
    ActionTrajectory,
    ConcurrentTransition,
    ContractViolationError,
    EnvDynamics,
    NumericDivergenceError,
    TimeModel,
    integrate,
    trajectory_value,
)
from .envs import (
    LATENCY_MENU,
    ConcurrentEnv,
    ConcurrentWrapperConfig,
    action_completion,
    make_env,
)
from .features import FeatureConfig, FeatureRegisters, assemble, compute_vtg
from .harness import (
    CSV_COLUMNS,
    SweepSpec,
    config_hash,
    read_records,
    run_sweep,
    sorted_robustness_curve,
)
from .nets import (
    MlpQNetwork,
    global_grad_norm,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .tabular import (
    FiniteConcurrentMdp,
    blocking_backup,
    concurrent_backup,
    contraction_certificate,
    make_refinement_family,
    mc_q_table,
    value_iteration,
    random_mdp,
    refinement_certificate,
)

__version__ = "0.1.0"

__all__ = [
    "ActionTrajectory",
    "CemConfig",
    "ConcurrentEnv",
    "ConcurrentTransition",
    "ConcurrentWrapperConfig",
    "ContractViolationError",
    "CSV_COLUMNS",
    "EnvDynamics",
    "FeatureRegisters",
    "FeatureConfig",
    "FiniteConcurrentMdp",
    "LATENCY_MENU",
    "MlpQNetwork",
    "NumericDivergenceError",
    "ReplayBuffer",
    "ReplayItem",
    "SweepSpec",
    "TimeModel",
    "TrainConfig",
    "TrainResult",
    "action_completion",
    "assemble",
    "action_grid",
    "blocking_backup",
    "cem_argmax",
    "cem_ql_train",
    "concurrent_backup",
    "compute_vtg",
    "config_hash",
    "contraction_certificate",
    "dqn_train",
    "evaluate_policy",
    "global_grad_norm",
    "greedy_cem_policy",
    "greedy_grid_policy",
    "integrate",
    "load_checkpoint",
    "make_env",
    "make_refinement_family",
    "mc_q_table",
    "value_iteration",
    "random_mdp",
    "read_records",
    "refinement_certificate",
    "run_sweep",
    "save_checkpoint",
    "sgd_step",
    "sorted_robustness_curve",
    "trajectory_value",
    "__version__",
]
