"""Experiment runners.

Every experiment is a list of independent cells. A cell is one pre-training,
fine-tuning or benchmark run with its own derived seed, and produces exactly
one RunRecord.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..algorithms import CMAPPOConfig, GRPOConfig, PPOConfig, cmappo_train, mlp_policy, train_grpo, train_ppo
from ..backbone import Backbone, pretrain
from ..data import load_csv, make_windows, preset_frame, price_features, split
from ..envs import ControlEnv
from ..finetune import attach, evaluate, finetune, forecast_env
from ..numerics import ContractError
from .config import SEED_SCHEME, SWEEP_PARAMS, ExperimentSpec, dump_config, run_seed
from .records import RunRecord, code_version, run_id

log = logging.getLogger(__name__)

RANDOM = "random"


# ------------------------------------------------------------------ data

@lru_cache(maxsize=16)
def _dataset(name: str, csv: str | None, length: int, num_features: int, data_seed: int, T: int, P: int):
    if csv is not None:
        frame = price_features(load_csv(csv))
    else:
        frame = preset_frame(name, seed=data_seed, length=length, num_features=num_features)
    return split(make_windows(frame, T, P))


def load_dataset(spec: ExperimentSpec, name: str):
    d, b = spec.data, spec.backbone
    ds = _dataset(name, d.csv, d.length, d.num_features, d.data_seed, b.context_length, b.horizon)
    if ds.num_features != b.num_features:
        raise ContractError(f"dataset {name!r} has {ds.num_features} features, backbone expects {b.num_features}")
    return ds


def dataset_name(spec: ExperimentSpec) -> str:
    return f"csv:{Path(spec.data.csv).stem}" if spec.data.csv else spec.data.preset


# ------------------------------------------------------------------ cells

class Cache:
    """Pre-trained backbones shared by cells with the same pre-training seed.

    Pre-training is deterministic, so a cached copy is identical to what the
    cell would compute itself; ``rerun`` always recomputes.
    """

    def __init__(self):
        self.backbones: dict[tuple, tuple[list[np.ndarray], dict]] = {}


def _pretrained(spec: ExperimentSpec, preset: str, seed: int, cache: Cache | None) -> tuple[Backbone, dict]:
    if spec.harness.backbone_path:
        bb = Backbone.load(spec.harness.backbone_path, spec.backbone)
        return bb, {"backbone_path": spec.harness.backbone_path}
    key = (preset, seed)
    rs = run_seed(spec.harness.master_seed, ("pretrain", preset), seed)
    if cache is not None and key in cache.backbones:
        arrays, hist = cache.backbones[key]
        bb = Backbone(spec.backbone, seed=rs)
        bb.load_arrays(arrays)
        return bb, hist
    bb = Backbone(spec.backbone, seed=rs)
    p = spec.pretrain
    h = pretrain(bb, load_dataset(spec, preset), epochs=p.epochs, lr=p.lr, batch_size=p.batch_size, seed=rs)
    if h.status != "ok":
        raise FloatingPointError(f"pre-training on {preset} diverged")
    hist = {"pretrain_seed": rs, "train_mse": h.train_mse, "val_mse": h.val_mse}
    if cache is not None:
        cache.backbones[key] = (bb.state_arrays(), hist)
    return bb, hist


def _reports(model, spec: ExperimentSpec, names: list[str], prefix: str) -> dict[str, dict]:
    return {f"{prefix}/{n}": evaluate(model, load_dataset(spec, n), "test").to_dict() for n in names}


def _pretrain_cell(spec, cell, seed, rs, cache, out_dir):
    bb, hist = _pretrained(spec, cell["preset"], seed, cache)
    if out_dir is not None:
        path = Path(out_dir) / "checkpoints" / f"{cell['preset']}-s{seed}.ftrl"
        path.parent.mkdir(parents=True, exist_ok=True)
        bb.save(path, {"preset": cell["preset"], "seed": seed, "pretrain_seed": hist.get("pretrain_seed")})
        hist = dict(hist, checkpoint=str(path))
    return hist, _reports(bb, spec, cell["eval"], "test"), "ok"


def _finetune_cell(spec, cell, seed, rs, cache, out_dir):
    bb, pre_hist = _pretrained(spec, cell["train"], seed, cache)
    reports = _reports(bb, spec, cell["eval"], "before")
    cfg = spec.finetune_config(rs, cell["algorithm"], **cell.get("overrides", {}))
    agent = attach(bb, cfg.paradigm, cfg)
    target = load_dataset(spec, cell["target"])
    log_path = None if out_dir is None else Path(out_dir) / "logs" / f"{cell['id']}.csv"
    res = finetune(agent, forecast_env(target, cfg), cfg, val_dataset=target, log_path=log_path)
    reports.update(_reports(agent, spec, cell["eval"], "after"))
    hist = {"pretrain": pre_hist, "rewards": [[r["step"], r["mean_reward"]] for r in res.rows],
            "snapshots": res.snapshots, "best_step": res.best_step, "finetune": cfg.to_dict()}
    return hist, reports, res.status


def _bench_cell(spec, cell, seed, rs, cache, out_dir):
    b = spec.bench
    env = ControlEnv(cell["env"])
    algo = cell["algorithm"]
    rng = np.random.default_rng(rs)
    obs_dim, act_dim = env.obs_shape[0], env.action_dim
    if algo == RANDOM:
        returns, steps, total, curve = [], 0, 0.0, []
        env.reset(seed=int(rng.integers(2**31)))
        while steps < b.timesteps:
            res = env.step(rng.uniform(-1.0, 1.0, size=act_dim))
            total += res.reward
            steps += 1
            if res.done:
                returns.append(total)
                curve.append([steps, total])
                total = 0.0
                env.reset(seed=int(rng.integers(2**31)))
        hist, status = {"episode_returns": returns, "curve": curve}, "ok"
    else:
        if algo == "ppo":
            pol = mlp_policy(obs_dim, act_dim, rng, b.hidden, critic_hidden=b.hidden)
            h = train_ppo(env, pol, PPOConfig(total_timesteps=b.timesteps, num_steps=b.num_steps), seed=rs)
        elif algo == "grpo":
            pol = mlp_policy(obs_dim, act_dim, rng, b.hidden, critic=False)
            cfg = GRPOConfig(total_timesteps=b.timesteps, lr=b.grpo_lr, minibatch_size=64)
            h = train_grpo(env, pol, cfg, seed=rs)
        else:
            cfg = CMAPPOConfig(num_subagents=b.num_subagents,
                               sub_ppo=PPOConfig(total_timesteps=b.sub_timesteps, num_steps=b.num_steps),
                               super_ppo=PPOConfig(total_timesteps=b.timesteps, num_steps=b.num_steps),
                               hidden=b.hidden, value_hidden=b.value_hidden)
            h = cmappo_train(env, None, cfg, seed=rs).super_history
        hist = {"episode_returns": h.episode_returns,
                "curve": [[r["step"], r["episodic_return"]] for r in h.rows]}
        status = h.status
    rets = hist["episode_returns"][-b.last_episodes:]
    final = float(np.mean(rets)) if rets else float("nan")
    return hist, {"return": {"final_return": final, "episodes": len(hist["episode_returns"])}}, status


CELL_KINDS: dict[str, Callable] = {"pretrain": _pretrain_cell, "finetune": _finetune_cell, "bench": _bench_cell}


def cell_labels(kind: str, cell: dict[str, Any]) -> list[str]:
    if kind == "pretrain":
        return ["pretrain", cell["preset"]]
    if kind == "finetune":
        over = [f"{k}={v}" for k, v in sorted(cell.get("overrides", {}).items())]
        return ["finetune", cell["train"], cell["target"], cell["algorithm"], *over]
    return ["bench", cell["env"], cell["algorithm"]]


def execute_cell(spec: ExperimentSpec, kind: str, cell: dict[str, Any], seed: int,
                 cache: Cache | None = None, out_dir: str | Path | None = None) -> RunRecord:
    """Run one cell. Failures are caught and recorded, never raised."""
    labels = cell_labels(kind, cell)
    rs = run_seed(spec.harness.master_seed, labels, seed)
    rid = run_id(labels[0], labels[1:], seed)
    cell = dict(cell, id=rid)
    rec = RunRecord(rid, spec.harness.kind, kind, cell, int(seed), rs, spec.to_dict(), code_version(),
                    started=datetime.now(timezone.utc).isoformat(timespec="seconds"), seed_scheme=SEED_SCHEME)
    t0 = time.perf_counter()
    try:
        rec.history, rec.reports, rec.status = CELL_KINDS[kind](spec, cell, seed, rs, cache, out_dir)
    except Exception as exc:  # one failed cell must not sink the experiment
        log.warning("run %s failed: %s", rid, exc)
        rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
    rec.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        rec.save(out_dir)
    log.info("run %s: %s in %.1fs", rid, rec.status, rec.wall_clock)
    return rec


# ------------------------------------------------------------------ experiments

def _prepare(spec: ExperimentSpec, kind: str, out_dir: str | Path | None, **harness) -> tuple[ExperimentSpec, Path | None]:
    spec = dataclasses.replace(spec, harness=dataclasses.replace(spec.harness, kind=kind, **harness))
    spec.validate()
    if out_dir is None:
        return spec, None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(spec, out / "config.yaml")
    return spec, out


def run_pretrain(spec: ExperimentSpec, out_dir: str | Path | None = None) -> list[RunRecord]:
    spec, out = _prepare(spec, "pretrain", out_dir)
    name = dataset_name(spec)
    return [execute_cell(spec, "pretrain", {"preset": name, "eval": [name]}, s, out_dir=out)
            for s in spec.harness.seeds]


def run_finetune(spec: ExperimentSpec, out_dir: str | Path | None = None) -> list[RunRecord]:
    spec, out = _prepare(spec, "finetune", out_dir)
    src = dataset_name(spec)
    dst = spec.data.target or src
    evals = [src] if src == dst else [src, dst]
    cell = {"train": src, "target": dst, "algorithm": spec.algorithm.name, "eval": evals}
    return [execute_cell(spec, "finetune", cell, s, out_dir=out) for s in spec.harness.seeds]


def transfer_cells(presets: list[str], algorithms: list[str]) -> list[tuple[str, dict]]:
    cells = []
    for p in presets:
        cells.append(("pretrain", {"preset": p, "eval": list(presets)}))
        for a in algorithms:
            for q in presets:
                cells.append(("finetune", {"train": p, "target": q, "algorithm": a, "eval": [q]}))
    return cells


def run_transfer_matrix(spec: ExperimentSpec, presets: list[str] | None = None, algorithms: list[str] | None = None,
                        out_dir: str | Path | None = None) -> list[RunRecord]:
    """Pre-train on each preset, evaluate everywhere (baseline), then fine-tune
    on each preset with each algorithm and evaluate on the fine-tuning
    target. Failed cells are recorded and rendered as absent."""
    presets = list(presets or spec.harness.presets)
    algorithms = list(algorithms or spec.harness.algorithms)
    if len(presets) < 2:
        raise ContractError("a transfer matrix needs at least 2 presets")
    if spec.data.csv is not None:
        raise ContractError("transfer matrices run over presets; unset data.csv")
    spec, out = _prepare(spec, "transfer", out_dir, presets=presets, algorithms=algorithms)
    cache = Cache()
    records = []
    for s in spec.harness.seeds:
        for kind, cell in transfer_cells(presets, algorithms):
            records.append(execute_cell(spec, kind, cell, s, cache, out))
    return records


def check_sweep(param: str, values: list, algorithm: str) -> None:
    if param not in SWEEP_PARAMS:
        raise ContractError(f"cannot sweep {param!r}; choose from {tuple(SWEEP_PARAMS)}")
    if algorithm not in SWEEP_PARAMS[param]:
        raise ContractError(f"{param} does not apply to {algorithm}; it applies to {SWEEP_PARAMS[param]}")
    if not values:
        raise ContractError("sweep values must be non-empty")


def run_sweep(spec: ExperimentSpec, param: str | None = None, values: list | None = None,
              out_dir: str | Path | None = None) -> list[RunRecord]:
    """One fine-tuning run per (value, seed)."""
    param = param or spec.harness.sweep_param
    values = list(values if values is not None else spec.harness.sweep_values)
    if param is None:
        raise ContractError("no sweep parameter given")
    check_sweep(param, values, spec.algorithm.name)
    spec, out = _prepare(spec, "sweep", out_dir, sweep_param=param, sweep_values=values)
    for v in values:  # reject bad values before any run starts
        spec.finetune_config(0, **{param: v})
    src = dataset_name(spec)
    dst = spec.data.target or src
    cache = Cache()
    records = []
    for v in values:
        for s in spec.harness.seeds:
            cell = {"train": src, "target": dst, "algorithm": spec.algorithm.name, "eval": [dst],
                    "overrides": {param: v}}
            records.append(execute_cell(spec, "finetune", cell, s, cache, out))
    return records


def run_bench(spec: ExperimentSpec, env: str | None = None, algorithms: list[str] | None = None,
              out_dir: str | Path | None = None) -> list[RunRecord]:
    """Final episodic return per algorithm and seed, plus a uniform-random row."""
    env = env or spec.bench.env
    algorithms = list(algorithms or spec.harness.algorithms)
    spec = dataclasses.replace(spec, bench=dataclasses.replace(spec.bench, env=env))
    spec, out = _prepare(spec, "bench", out_dir, algorithms=algorithms)
    records = []
    for a in [RANDOM, *algorithms]:
        for s in spec.harness.seeds:
            records.append(execute_cell(spec, "bench", {"env": env, "algorithm": a}, s, out_dir=out))
    return records


RUNNERS = {"pretrain": run_pretrain, "finetune": run_finetune, "transfer": run_transfer_matrix,
           "sweep": run_sweep, "bench": run_bench}


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> list[RunRecord]:
    return RUNNERS[spec.harness.kind](spec, out_dir=out_dir)


def rerun(record: RunRecord, out_dir: str | Path | None = None) -> tuple[RunRecord, bool]:
    """Execute a record's cell again from its spec snapshot. Returns the new
    record and whether every final metric matches bit for bit."""
    spec = ExperimentSpec.from_dict(record.spec)
    cell = {k: v for k, v in record.cell.items() if k != "id"}
    new = execute_cell(spec, record.kind, cell, record.seed, out_dir=out_dir)
    same = json.dumps(new.reports, sort_keys=True) == json.dumps(record.reports, sort_keys=True)
    return new, same and new.status == record.status
