"""Sweep orchestration: cartesian config grids, CSV records, robustness curves.

One row per (configuration, seed).  Rows are flushed as trials finish so
an interrupted sweep resumes by skipping already-recorded pairs, and the
finished file is rewritten sorted by (config_hash, seed) so the body is
byte-identical regardless of scheduling, interruption, or worker count.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .agents import CemConfig, TrainConfig, cem_ql_train, dqn_train
from .core import ContractViolationError, TimeModel
from .envs import LATENCY_MENU, ConcurrentEnv, ConcurrentWrapperConfig, make_env
from .features import FeatureConfig

logger = logging.getLogger("concurq.harness")

CSV_COLUMNS = (
    "config_hash", "execution_mode", "latency_ms", "latency_schedule",
    "use_vtg", "use_prev_action", "use_t_as", "n_stack_states",
    "n_stack_actions", "n_action_bins", "learning_rate", "seed", "status",
    "final_return", "episode_sim_duration_s", "action_completion",
    "wall_clock_s",
)


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian grid over environment and learner knobs.

    Tuple-valued fields are swept; scalar fields apply to every cell.
    latencies are in milliseconds to match the record schema.
    """

    env_name: str = "pendulum"
    agent: str = "dqn"  # dqn | cem_ql
    episodes: int = 300
    sampling_period: float = 0.1
    physics_dt: float = 0.01
    gamma: float = 0.99
    execution_modes: tuple = ("concurrent",)
    latencies_ms: tuple = (50.0,)
    latency_schedules: tuple = ("fixed",)
    use_vtg: tuple = (False,)
    use_prev_action: tuple = (False,)
    use_t_as: tuple = (False,)
    n_stack_states: tuple = (0,)
    n_stack_actions: tuple = (0,)
    n_action_bins: tuple = (5,)
    learning_rates: tuple = (1e-3,)
    seeds: tuple = (0, 1, 2)
    # fixed trainer knobs shared by every cell
    batch_size: int = 32
    buffer_capacity: int = 60_000
    warmup_transitions: int = 500
    target_sync_period: int = 200
    train_every: int = 1
    explore_hold: int = 1
    timestep_penalty: float = 0.0
    action_execution_extra: float = 0.0
    reward_mode: str = "integrated"

    def __post_init__(self):
        if self.agent not in ("dqn", "cem_ql"):
            raise ContractViolationError(f"unknown agent {self.agent!r}")
        for name in ("execution_modes", "latencies_ms", "latency_schedules",
                     "use_vtg", "use_prev_action", "use_t_as", "n_stack_states",
                     "n_stack_actions", "n_action_bins", "learning_rates", "seeds"):
            if not getattr(self, name):
                raise ContractViolationError(f"swept field {name} is empty")

    def cells(self) -> list[dict]:
        """Flattened config dict per grid cell, seed excluded."""
        fixed = {
            "env_name": self.env_name,
            "agent": self.agent,
            "episodes": self.episodes,
            "sampling_period": self.sampling_period,
            "physics_dt": self.physics_dt,
            "gamma": self.gamma,
            "batch_size": self.batch_size,
            "buffer_capacity": self.buffer_capacity,
            "warmup_transitions": self.warmup_transitions,
            "target_sync_period": self.target_sync_period,
            "train_every": self.train_every,
            "explore_hold": self.explore_hold,
            "timestep_penalty": self.timestep_penalty,
            "action_execution_extra": self.action_execution_extra,
            "reward_mode": self.reward_mode,
        }
        out = []
        for (mode, lat, sched, vtg, prev, tas, nss, nsa, bins, lr) in itertools.product(
                self.execution_modes, self.latencies_ms, self.latency_schedules,
                self.use_vtg, self.use_prev_action, self.use_t_as,
                self.n_stack_states, self.n_stack_actions,
                self.n_action_bins, self.learning_rates):
            cell = dict(fixed)
            cell.update(execution_mode=mode, latency_ms=float(lat),
                        latency_schedule=sched, use_vtg=bool(vtg),
                        use_prev_action=bool(prev), use_t_as=bool(tas),
                        n_stack_states=int(nss), n_stack_actions=int(nsa),
                        n_action_bins=int(bins), learning_rate=float(lr))
            out.append(cell)
        return out


def config_hash(cell: dict) -> str:
    """First 12 hex chars of sha256 over the canonical cell JSON.

    The seed never participates, so all seeds of one cell share a hash.
    """
    if "seed" in cell:
        cell = {k: v for k, v in cell.items() if k != "seed"}
    canon = json.dumps(cell, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def build_wrapper(cell: dict, seed: int) -> ConcurrentEnv:
    tm = TimeModel(sampling_period=cell["sampling_period"], gamma=cell["gamma"],
                   physics_dt=cell["physics_dt"])
    latency = cell["latency_ms"] / 1000.0
    latency_set = (latency,) if cell["latency_schedule"] == "fixed" else LATENCY_MENU
    wcfg = ConcurrentWrapperConfig(
        execution_mode=cell["execution_mode"],
        latency_schedule=cell["latency_schedule"],
        latency=latency,
        latency_set=latency_set,
        action_execution_extra=cell["action_execution_extra"],
        reward_mode=cell["reward_mode"],
    )
    fcfg = FeatureConfig(
        use_vtg=cell["use_vtg"], use_prev_action=cell["use_prev_action"],
        use_t_as=cell["use_t_as"], n_stack_states=cell["n_stack_states"],
        n_stack_actions=cell["n_stack_actions"],
        t_as_bounds=(0.0, max(max(latency_set), 1e-9)),
    )
    return ConcurrentEnv(make_env(cell["env_name"]), tm, wcfg, fcfg, seed=seed)


def build_train_config(cell: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        episodes=cell["episodes"], learning_rate=cell["learning_rate"],
        batch_size=cell["batch_size"], buffer_capacity=cell["buffer_capacity"],
        warmup_transitions=cell["warmup_transitions"],
        target_sync_period=cell["target_sync_period"],
        train_every=cell["train_every"], explore_hold=cell["explore_hold"],
        n_action_bins=cell["n_action_bins"] if cell["agent"] == "dqn" else 5,
        timestep_penalty=cell["timestep_penalty"], seed=seed,
    )


def _check_durations(cell: dict, result) -> None:
    # sim duration must recompose from steps, H, extra and the stall charge
    H = cell["sampling_period"]
    extra = cell["action_execution_extra"]
    blocking = cell["execution_mode"] == "blocking"
    for n, dur, lat in zip(result.steps, result.sim_durations, result.latencies):
        expect = n * (H + extra + lat) if blocking else n * H
        if abs(dur - expect) > 1e-6:
            raise ContractViolationError(
                f"episode duration {dur} != expected {expect} "
                f"(steps={n}, latency={lat})"
            )


def run_trial(cell: dict, seed: int) -> dict:
    """One (cell, seed) training run -> record dict keyed by CSV_COLUMNS."""
    record = {k: cell[k] for k in CSV_COLUMNS if k in cell}
    record["config_hash"] = config_hash(cell)
    record["seed"] = seed
    try:
        wrapper = build_wrapper(cell, seed)
        tcfg = build_train_config(cell, seed)
        train = dqn_train if cell["agent"] == "dqn" else cem_ql_train
        result = train(wrapper, tcfg)
        _check_durations(cell, result)
        stats = result.final_stats()
        record.update(
            status="ok",
            final_return=stats["final_return"],
            episode_sim_duration_s=stats["episode_sim_duration_s"],
            action_completion=stats["action_completion"],
            wall_clock_s=float(np.sum(result.sim_durations)),
        )
    except Exception as exc:  # noqa: BLE001 - a failed trial must not kill the sweep
        logger.warning("trial %s seed %d failed: %s", record["config_hash"], seed, exc)
        record.update(
            status=f"failed: {type(exc).__name__}: {exc}",
            final_return=float("nan"), episode_sim_duration_s=float("nan"),
            action_completion=float("nan"), wall_clock_s=float("nan"),
        )
    return record


def _format_value(col: str, value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_to_row(record: dict) -> list[str]:
    return [_format_value(c, record[c]) for c in CSV_COLUMNS]


def _read_rows(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and tuple(header) != CSV_COLUMNS:
            raise ContractViolationError(f"unexpected CSV header in {path}")
        return [row for row in reader if row]


def completed_pairs(path) -> set[tuple[str, int]]:
    if not os.path.exists(path):
        return set()
    return {(row[0], int(row[11])) for row in _read_rows(path)}


def _sorted_rewrite(path) -> None:
    rows = _read_rows(path)
    rows.sort(key=lambda r: (r[0], int(r[11])))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)


def _run_trial_star(args):
    return run_trial(*args)


def run_sweep(spec: SweepSpec, out_csv, parallelism: int = 1) -> list[dict]:
    """Every cell x seed once; appends rows as they finish, then sorts.

    Already-recorded (hash, seed) pairs are skipped, so rerunning a
    finished sweep is a no-op and an interrupted one picks up where it
    stopped.  Returns records from this invocation only.
    """
    done = completed_pairs(out_csv)
    pending = []
    for cell in spec.cells():
        h = config_hash(cell)
        for seed in spec.seeds:
            if (h, int(seed)) not in done:
                pending.append((cell, int(seed)))
    new_file = not os.path.exists(out_csv)
    records = []
    with open(out_csv, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(CSV_COLUMNS)
            fh.flush()
        if parallelism > 1 and pending:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                for record in pool.map(_run_trial_star, pending):
                    records.append(record)
                    writer.writerow(_record_to_row(record))
                    fh.flush()
        else:
            for cell, seed in pending:
                record = run_trial(cell, seed)
                records.append(record)
                writer.writerow(_record_to_row(record))
                fh.flush()
    _sorted_rewrite(out_csv)
    logger.info("sweep: %d new trials, %d skipped", len(records), len(done))
    return records


# -- robustness curves ------------------------------------------------------------


def read_records(path) -> list[dict]:
    """Typed records from a sweep CSV."""
    out = []
    for row in _read_rows(path):
        rec = dict(zip(CSV_COLUMNS, row))
        rec["seed"] = int(rec["seed"])
        for k in ("final_return", "episode_sim_duration_s", "action_completion",
                  "wall_clock_s", "latency_ms", "learning_rate"):
            rec[k] = float(rec[k])
        for k in ("use_vtg", "use_prev_action", "use_t_as"):
            rec[k] = rec[k] == "true"
        for k in ("n_stack_states", "n_stack_actions", "n_action_bins"):
            rec[k] = int(rec[k])
        out.append(rec)
    return out


def sorted_robustness_curve(records, group_by=("use_vtg",), metric="final_return"):
    """Per arm: performances sorted descending with 1-based rank, plus AUC.

    AUC is normalized by arm size (the mean height of the curve), so
    arms of different cardinality stay comparable.  Arms without usable
    rows are omitted with a warning.  Failed trials never rank.
    """
    arms: dict[str, list[float]] = {}
    for rec in records:
        key = ",".join(f"{c}={_format_value(c, rec[c])}" for c in group_by)
        arms.setdefault(key, [])
        if rec.get("status", "ok") == "ok" and np.isfinite(rec[metric]):
            arms[key].append(float(rec[metric]))
    curves: dict[str, list[tuple[int, float]]] = {}
    aucs: dict[str, float] = {}
    for key in sorted(arms):
        vals = sorted(arms[key], reverse=True)
        if not vals:
            logger.warning("arm %s has no usable records; omitted", key)
            continue
        curves[key] = [(i + 1, v) for i, v in enumerate(vals)]
        aucs[key] = float(np.mean(vals))
    return curves, aucs
