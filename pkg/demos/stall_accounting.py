"""Where does the simulated time go when control stalls?

Steps the pointmass under blocking and concurrent execution at several
action-selection stalls and prints the per-episode simulated duration and
action completion. No learning here, just a random policy: the timing
split is a property of the execution model, not the agent.

Blocking charges every episode the full stall on top of running each
command to completion; concurrent execution keeps wall time fixed at
steps x period and instead pays in completion, because the next command
preempts the previous one mid-ramp.

    python3 demos/stall_accounting.py --stalls 0 0.025 0.05
"""

import argparse

import numpy as np

from concurq.agents import evaluate_policy
from concurq.core import TimeModel
from concurq.envs import ConcurrentEnv, ConcurrentWrapperConfig, make_env
from concurq.features import FeatureConfig


def wrapper_at(mode: str, stall: float, seed: int) -> ConcurrentEnv:
    tm = TimeModel(sampling_period=0.1, gamma=0.99, physics_dt=0.005)
    wcfg = ConcurrentWrapperConfig(execution_mode=mode, latency_schedule="fixed",
                                   latency=stall, latency_set=(stall,))
    fcfg = FeatureConfig(t_as_bounds=(0.0, max(stall, 1e-9)))
    return ConcurrentEnv(make_env("pointmass"), tm, wcfg, fcfg, seed=seed)


def random_policy(rng, low, high):
    def act(obs):
        return rng.uniform(low, high)
    return act


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stalls", type=float, nargs="+",
                    default=[0.0, 0.025, 0.05])
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"pointmass, horizon 50 steps, sampling period 0.1 s, "
          f"{args.episodes} episodes per cell\n")
    header = f"{'stall':>8} {'mode':>11} {'sim duration':>13} {'completion':>11}"
    print(header)
    print("-" * len(header))
    for stall in args.stalls:
        for mode in ("blocking", "concurrent"):
            w = wrapper_at(mode, stall, args.seed)
            rng = np.random.default_rng(args.seed + 1)
            policy = random_policy(rng, w.env.action_low, w.env.action_high)
            m = evaluate_policy(w, policy, n_episodes=args.episodes)
            print(f"{stall:8.3f} {mode:>11} "
                  f"{m['mean_episode_sim_duration_s']:12.3f}s "
                  f"{m['mean_action_completion']:11.3f}")
        print()


if __name__ == "__main__":
    main()
