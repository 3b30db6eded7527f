"""Command-line entry point: train, evaluate, sweep, verify-contraction, bench-env.

stdout carries exactly one JSON payload per invocation (sorted keys);
all human-readable logging goes to stderr.  Exit codes: 0 success,
1 contract violation (including usage errors), 2 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agents import (
    CemConfig,
    TrainConfig,
    action_grid,
    cem_ql_train,
    dqn_train,
    evaluate_policy,
    greedy_cem_policy,
    greedy_grid_policy,
)
from .core import ContractViolationError, NumericDivergenceError, TimeModel
from .envs import LATENCY_MENU, ConcurrentEnv, ConcurrentWrapperConfig, make_env
from .features import FeatureConfig
from .harness import SweepSpec, read_records, run_sweep, sorted_robustness_curve
from .nets import load_checkpoint, save_checkpoint
from .tabular import (
    contraction_certificate,
    make_refinement_family,
    random_mdp,
    refinement_certificate,
)

logger = logging.getLogger("concurq.cli")


class _Parser(argparse.ArgumentParser):
    # usage problems are contract violations, not a third exit-code family
    def error(self, message):
        raise ContractViolationError(f"usage: {message}")


def _load_config(path) -> dict:
    if not os.path.exists(path):
        raise ContractViolationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# -- config -> objects -------------------------------------------------------


def _time_model(cfg: dict) -> TimeModel:
    t = cfg.get("time", {})
    return TimeModel(sampling_period=t.get("sampling_period", 0.1),
                     gamma=t.get("gamma", 0.99),
                     physics_dt=t.get("physics_dt", 0.01))


def _feature_config(cfg: dict, latency_cap: float) -> FeatureConfig:
    f = cfg.get("features", {})
    return FeatureConfig(
        use_vtg=f.get("use_vtg", False),
        use_prev_action=f.get("use_prev_action", False),
        use_t_as=f.get("use_t_as", False),
        n_stack_states=f.get("n_stack_states", 0),
        n_stack_actions=f.get("n_stack_actions", 0),
        t_as_bounds=(0.0, max(latency_cap, 1e-9)),
    )


def _build_wrapper(cfg: dict, seed: int) -> ConcurrentEnv:
    w = cfg.get("wrapper", {})
    latency = w.get("latency", 0.05)
    schedule = w.get("latency_schedule", "fixed")
    latency_set = tuple(w.get("latency_set",
                              (latency,) if schedule == "fixed" else LATENCY_MENU))
    wcfg = ConcurrentWrapperConfig(
        execution_mode=w.get("execution_mode", "concurrent"),
        latency_schedule=schedule,
        latency=latency,
        latency_set=latency_set,
        action_execution_extra=w.get("action_execution_extra", 0.0),
        reward_mode=w.get("reward_mode", "integrated"),
    )
    env = make_env(cfg.get("run", {}).get("env", "pendulum"))
    fcfg = _feature_config(cfg, max(latency_set))
    return ConcurrentEnv(env, _time_model(cfg), wcfg, fcfg, seed=seed)


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    allowed = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(t) - allowed
    if unknown:
        raise ContractViolationError(f"unknown [train] keys: {sorted(unknown)}")
    if "hidden" in t:
        t["hidden"] = tuple(t["hidden"])
    t["seed"] = seed
    return TrainConfig(**t)


def _cem_config(cfg: dict) -> CemConfig:
    c = cfg.get("cem", {})
    return CemConfig(n_iterations=c.get("n_iterations", 4),
                     population=c.get("population", 64),
                     elite_frac=c.get("elite_frac", 0.1),
                     std_floor=c.get("std_floor", 1e-3))


def _run_name(cfg: dict, seed: int) -> str:
    run = cfg.get("run", {})
    stem = run.get("name", f"{run.get('env', 'pendulum')}_{run.get('agent', 'dqn')}")
    return f"{stem}_seed{seed}"


def _ensure_out(out: str) -> None:
    os.makedirs(os.path.join(out, "curves"), exist_ok=True)
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)


# -- commands ---------------------------------------------------------------------


def _cmd_train(args) -> dict:
    cfg = _load_config(args.config)
    run = cfg.get("run", {})
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    agent = run.get("agent", "dqn")
    wrapper = _build_wrapper(cfg, seed)
    tcfg = _train_config(cfg, seed)
    t0 = time.perf_counter()
    if agent == "dqn":
        result = dqn_train(wrapper, tcfg)
    elif agent == "cem_ql":
        result = cem_ql_train(wrapper, tcfg, _cem_config(cfg))
    else:
        raise ContractViolationError(f"unknown agent {agent!r}")
    elapsed = time.perf_counter() - t0
    _ensure_out(args.out)
    name = _run_name(cfg, seed)
    curve_path = os.path.join(args.out, "curves", f"{name}.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "return", "episode_sim_duration_s",
                         "action_completion"])
        for i, (r, d, c) in enumerate(zip(result.returns, result.sim_durations,
                                          result.completions)):
            writer.writerow([i, repr(float(r)), repr(float(d)), repr(float(c))])
    ckpt_path = os.path.join(args.out, "checkpoints", f"{name}.ckpt")
    save_checkpoint(result.net, ckpt_path)
    logger.info("trained %s in %.1fs (%d gradient steps)", name, elapsed,
                result.gradient_steps)
    stats = result.final_stats()
    return {
        "name": name, "agent": agent, "seed": seed,
        "episodes": len(result.returns),
        "gradient_steps": result.gradient_steps,
        "final_return": stats["final_return"],
        "episode_sim_duration_s": stats["episode_sim_duration_s"],
        "action_completion": stats["action_completion"],
        "total_sim_seconds": float(np.sum(result.sim_durations)),
        "curve_csv": curve_path, "checkpoint": ckpt_path,
    }


def _cmd_evaluate(args) -> dict:
    cfg = _load_config(args.config)
    run = cfg.get("run", {})
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    agent = run.get("agent", "dqn")
    net = load_checkpoint(args.checkpoint)
    wrapper = _build_wrapper(cfg, seed)
    env = wrapper.env
    if agent == "dqn":
        bins = cfg.get("train", {}).get("n_action_bins", 5)
        grid = action_grid(env.action_low, env.action_high, bins)
        if net.sizes[0] != wrapper.obs_dim or net.sizes[-1] != grid.shape[0]:
            raise ContractViolationError(
                f"checkpoint shape {net.sizes} does not match obs dim "
                f"{wrapper.obs_dim} / {grid.shape[0]} grid actions"
            )
        policy = greedy_grid_policy(net, grid)
    elif agent == "cem_ql":
        if net.sizes[0] != wrapper.obs_dim + env.action_dim:
            raise ContractViolationError(
                f"checkpoint input {net.sizes[0]} != obs+action dim "
                f"{wrapper.obs_dim + env.action_dim}"
            )
        policy = greedy_cem_policy(net, env.action_low, env.action_high,
                                   _cem_config(cfg), np.random.default_rng(seed))
    else:
        raise ContractViolationError(f"unknown agent {agent!r}")
    metrics = evaluate_policy(wrapper, policy, n_episodes=args.episodes)
    metrics.update(seed=seed, checkpoint=args.checkpoint,
                   execution_mode=wrapper.config.execution_mode)
    return metrics


def _cmd_sweep(args) -> dict:
    cfg = _load_config(args.config)
    s = cfg.get("sweep", {})
    allowed = {f for f in SweepSpec.__dataclass_fields__}
    unknown = set(s) - allowed - {"group_by", "parallelism"}
    if unknown:
        raise ContractViolationError(f"unknown [sweep] keys: {sorted(unknown)}")
    group_by = tuple(s.pop("group_by", ("use_vtg",)))
    parallelism = int(s.pop("parallelism", args.parallelism))
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in s.items()}
    spec = SweepSpec(**kwargs)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "records.csv")
    new_records = run_sweep(spec, out_csv, parallelism=parallelism)
    rows = read_records(out_csv)
    _, aucs = sorted_robustness_curve(rows, group_by=group_by)
    return {
        "csv": out_csv,
        "new_trials": len(new_records),
        "total_rows": len(rows),
        "failed_rows": sum(1 for r in rows if r["status"] != "ok"),
        "group_by": list(group_by),
        "auc": aucs,
    }


def _cmd_verify_contraction(args) -> dict:
    cfg = _load_config(args.config)
    c = cfg.get("contraction", {})
    r = cfg.get("refinement", {})
    override = 1.0 if args.sabotage else None
    rng = np.random.default_rng(c.get("seed", 0))
    gammas = c.get("gammas", [0.5, 0.9, 0.99])
    latencies = tuple(c.get("latencies", [0.0, 0.25, 0.5, 0.9]))
    n_mdps = c.get("n_mdps", 10)
    n_pairs = c.get("n_pairs", 50)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "contraction_report.csv")
    all_ok = True
    worst = None
    n_rows = 0
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "trial", "gamma", "latency", "modulus", "bound", "ok"])
        for gamma in gammas:
            for trial in range(n_mdps):
                mdp = random_mdp(
                    n_states=c.get("n_states", 6), n_actions=c.get("n_actions", 4),
                    latencies=latencies, gamma=gamma, rng=rng,
                    mode=c.get("mode", "fixed"),
                )
                report = contraction_certificate(mdp, n_pairs=n_pairs, rng=rng,
                                                 discount_override=override)
                for sl in report.slices:
                    writer.writerow(["concurrent", trial, gamma, sl.latency,
                                     repr(sl.modulus), repr(sl.bound), sl.ok])
                    n_rows += 1
                    if not sl.ok:
                        all_ok = False
                        if worst is None or sl.modulus - sl.bound > worst[0]:
                            worst = (sl.modulus - sl.bound, gamma, sl.latency, trial)
        fam = make_refinement_family(
            n_states=r.get("n_states", 5), n_actions=r.get("n_actions", 3),
            gamma=r.get("gamma", 0.9), t_as_fraction=r.get("t_as_fraction", 0.3),
            k_max=r.get("k_max", 8), rng=np.random.default_rng(r.get("seed", 0)),
        )
        ref = refinement_certificate(fam, n_pairs=r.get("n_pairs", 50),
                                     rng=np.random.default_rng(r.get("seed", 0) + 1))
        for level, modulus in zip(ref.levels, ref.moduli):
            writer.writerow(["refinement", level, fam.gamma, fam.t_as_fraction,
                             repr(modulus), repr(ref.bound), modulus <= ref.bound + 1e-9])
            n_rows += 1
        if not ref.passed:
            all_ok = False
    payload = {
        "report_csv": report_path, "rows": n_rows,
        "contraction_passed": all_ok and (worst is None),
        "refinement_passed": ref.passed,
        "refinement_cauchy_gap": ref.cauchy_gap,
        "passed": all_ok and ref.passed,
        "sabotage": bool(args.sabotage),
    }
    if worst is not None:
        payload["worst_violation"] = {
            "excess": worst[0], "gamma": worst[1], "latency": worst[2],
            "trial": worst[3],
        }
    if not payload["passed"]:
        _emit(payload)
        raise ContractViolationError("observed modulus exceeded certified bound")
    return payload


def _cmd_bench_env(args) -> dict:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else 0
    wrapper = _build_wrapper(cfg, seed)
    rng = np.random.default_rng(seed)
    env = wrapper.env
    steps = 0
    t0 = time.perf_counter()
    for _ in range(args.episodes):
        wrapper.reset()
        while not wrapper.done:
            wrapper.step(rng.uniform(env.action_low, env.action_high))
            steps += 1
    elapsed = time.perf_counter() - t0
    ticks = steps * wrapper.tm.ticks_per_period
    return {
        "episodes": args.episodes, "steps": steps,
        "elapsed_s": elapsed,
        "steps_per_s": steps / elapsed,
        "physics_ticks_per_s": ticks / elapsed,
    }


# -- wiring ---------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="concurq",
                     description="Concurrent-control RL toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one agent from a TOML config")
    p_train.add_argument("config")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default="out")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("config")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default="out")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="run a hyperparameter sweep grid")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out", default="out")
    p_sweep.add_argument("--parallelism", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_ver = sub.add_parser("verify-contraction",
                           help="measure operator moduli against certified bounds")
    p_ver.add_argument("config")
    p_ver.add_argument("--out", default="out")
    p_ver.add_argument("--sabotage", action="store_true",
                       help="drop the latency discount (must fail)")
    p_ver.set_defaults(func=_cmd_verify_contraction)

    p_bench = sub.add_parser("bench-env", help="wrapper stepping throughput")
    p_bench.add_argument("config")
    p_bench.add_argument("--episodes", type=int, default=5)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", default="out")
    p_bench.set_defaults(func=_cmd_bench_env)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    # handler scoped to this invocation so repeated in-process calls
    # (tests, notebooks) neither stack handlers nor hold stale streams
    pkg_logger = logging.getLogger("concurq")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    pkg_logger.addHandler(handler)
    old_level, old_propagate = pkg_logger.level, pkg_logger.propagate
    pkg_logger.propagate = False
    pkg_logger.setLevel(logging.INFO)
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            pkg_logger.setLevel(logging.DEBUG)
        payload = args.func(args)
        _emit(payload)
        return 0
    except ContractViolationError as exc:
        logger.error("%s", exc)
        return 1
    except NumericDivergenceError as exc:
        logger.error("numeric divergence: %s", exc)
        return 2
    finally:
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(old_level)
        pkg_logger.propagate = old_propagate


if __name__ == "__main__":
    sys.exit(main())
