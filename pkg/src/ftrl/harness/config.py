"""Experiment specification, YAML config files and the per-run seed scheme.

A config file has up to seven top-level sections, all optional:

    data:      preset, csv, target, length, num_features, data_seed
    backbone:  BackboneConfig fields
    pretrain:  epochs, lr, batch_size
    algorithm: name, ppo, grpo, cmappo (nested algorithm configs)
    finetune:  paradigm, frozen_fraction, total_timesteps, warmup_steps, lr,
               episode_length, eval_every, checkpoint, critic_hidden,
               zero_head, log_std_init
    bench:     env, timesteps, num_steps, hidden, grpo_lr, num_subagents,
               sub_timesteps, value_hidden, last_episodes
    harness:   kind, seeds, master_seed, out_dir, presets, algorithms,
               sweep_param, sweep_values, backbone_path

Unknown keys are rejected. Any field can be overridden with a dotted
``section.key=value`` assignment (the CLI's ``--set``).
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..algorithms import CMAPPOConfig, GRPOConfig, PPOConfig
from ..backbone import BackboneConfig
from ..data import PRESETS
from ..envs import VARIANTS
from ..finetune import ALGORITHMS, FinetuneConfig
from ..numerics import ContractError

KINDS = ("pretrain", "finetune", "transfer", "sweep", "bench")
SWEEP_PARAMS = {
    "total_timesteps": ALGORITHMS,
    "frozen_fraction": ALGORITHMS,
    "group_size": ("grpo",),
    "num_subagents": ("cmappo",),
}
SEED_SCHEME = "SeedSequence(master_seed, spawn_key=(crc32(label) for each cell label) + (seed,)).generate_state(1, uint64)"


@dataclass
class DataSection:
    preset: str = "synth-financial"
    csv: str | None = None           # a price CSV replaces the preset when given
    target: str | None = None        # fine-tuning dataset; None reuses `preset`
    length: int = 1600
    num_features: int = 8
    data_seed: int = 0


@dataclass
class PretrainSection:
    epochs: int = 6
    lr: float = 1e-3
    batch_size: int = 32


@dataclass
class AlgorithmSection:
    name: str = "grpo"
    ppo: PPOConfig = field(default_factory=lambda: PPOConfig(num_steps=512, minibatch_size=64, epochs=4))
    grpo: GRPOConfig = field(default_factory=GRPOConfig)
    cmappo: CMAPPOConfig = field(default_factory=lambda: CMAPPOConfig(
        num_subagents=4, sub_ppo=PPOConfig(total_timesteps=1024, num_steps=512, epochs=4),
        super_ppo=PPOConfig(num_steps=512, epochs=4)))


@dataclass
class FinetuneSection:
    paradigm: str = "actor"
    frozen_fraction: float = 0.5
    total_timesteps: int = 2048
    warmup_steps: int | None = None
    lr: float | None = None
    episode_length: int = 128
    eval_every: int = 512
    checkpoint: str = "best"
    critic_hidden: int = 256
    zero_head: bool = False
    log_std_init: float = 0.0


@dataclass
class BenchSection:
    env: str = "stick-balance"
    timesteps: int = 40_000
    num_steps: int = 1024
    hidden: int = 64
    grpo_lr: float = 1e-3
    num_subagents: int = 2
    sub_timesteps: int = 8000
    value_hidden: int = 64
    last_episodes: int = 10


@dataclass
class HarnessSection:
    kind: str = "finetune"
    seeds: list[int] = field(default_factory=lambda: [0])
    master_seed: int = 0
    out_dir: str = "runs"
    presets: list[str] = field(default_factory=lambda: list(PRESETS))
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    sweep_param: str | None = None
    sweep_values: list[Any] = field(default_factory=list)
    backbone_path: str | None = None


def _desk_backbone() -> BackboneConfig:
    return BackboneConfig(context_length=16, num_features=8, horizon=4, model_dim=32, num_heads=4,
                          num_layers=4, ff_dim=64)


@dataclass
class ExperimentSpec:
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneConfig = field(default_factory=_desk_backbone)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    algorithm: AlgorithmSection = field(default_factory=AlgorithmSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    bench: BenchSection = field(default_factory=BenchSection)
    harness: HarnessSection = field(default_factory=HarnessSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        h = self.harness
        if h.kind not in KINDS:
            raise ContractError(f"unknown experiment kind {h.kind!r}; choose from {KINDS}")
        if not h.seeds:
            raise ContractError("seeds must be non-empty")
        if self.data.csv is None:
            for name in [self.data.preset, self.data.target, *h.presets]:
                if name is not None and name not in PRESETS:
                    raise ContractError(f"unknown preset {name!r}; choose from {PRESETS}")
        for a in [self.algorithm.name, *h.algorithms]:
            if a not in ALGORITHMS:
                raise ContractError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        if self.bench.env not in VARIANTS:
            raise ContractError(f"unknown env variant {self.bench.env!r}; choose from {VARIANTS}")
        if h.sweep_param is not None and h.sweep_param not in SWEEP_PARAMS:
            raise ContractError(f"cannot sweep {h.sweep_param!r}; choose from {tuple(SWEEP_PARAMS)}")
        self.finetune_config(0)  # surfaces invalid fine-tuning settings early

    def finetune_config(self, seed: int, algorithm: str | None = None, **overrides) -> FinetuneConfig:
        f, a = self.finetune, self.algorithm
        kw = dict(asdict(f), algorithm=algorithm or a.name, seed=seed,
                  ppo=dataclasses.replace(a.ppo), grpo=dataclasses.replace(a.grpo), cmappo=dataclasses.replace(a.cmappo))
        if kw["algorithm"] == "cmappo":
            kw["paradigm"] = "latent"  # the superagent reads d_t, never the raw window
        for key, value in overrides.items():
            if key == "group_size":
                kw["grpo"] = dataclasses.replace(kw["grpo"], group_size=int(value))
            elif key == "num_subagents":
                kw["cmappo"] = dataclasses.replace(kw["cmappo"], num_subagents=int(value))
            elif key == "total_timesteps":
                kw["total_timesteps"] = int(value)
            elif key == "frozen_fraction":
                kw["frozen_fraction"] = float(value)
            else:
                raise ContractError(f"unsupported override {key!r}")
        return FinetuneConfig(**kw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "ExperimentSpec":
        return _build(cls, data or {}, "")


def _build(cls, data: dict[str, Any], where: str, base=None):
    """Dataclass from a (possibly partial) mapping; missing keys keep the
    values of ``base``, which defaults to the section's own defaults."""
    if not isinstance(data, dict):
        raise ContractError(f"config section {where or '<root>'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ContractError(f"unknown config key(s) {unknown} in {where or '<root>'}")
    kw = {}
    for name, value in data.items():
        f = names[name]
        if base is not None:
            current = getattr(base, name)
        elif f.default_factory is not dataclasses.MISSING:
            current = f.default_factory()
        else:
            current = f.default
        if dataclasses.is_dataclass(current) and value is not None:
            kw[name] = _build(type(current), value, f"{where}.{name}".strip("."), current)
        else:
            kw[name] = value
    return dataclasses.replace(base, **kw) if base is not None else cls(**kw)


def load_config(path: str | Path | None = None, overrides: list[str] | tuple = ()) -> ExperimentSpec:
    """Read a YAML config (or start from defaults) and apply dotted overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ContractError(f"override {item!r} is not of the form section.key=value")
        set_path(data, key.strip(), yaml.safe_load(raw))
    return ExperimentSpec.from_dict(data)


def set_path(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ContractError(f"cannot set {dotted!r}: {p!r} is not a section")
    node[parts[-1]] = value


def dump_config(spec: ExperimentSpec, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False), encoding="utf-8")


def run_seed(master_seed: int, labels: tuple[str, ...] | list[str], seed: int) -> int:
    """Per-cell seed from the master seed, the cell's labels and the user seed.

    Only the labels enter the derivation, never the execution order, so
    cells can run in any order or in parallel.
    """
    key = tuple(zlib.crc32(str(lab).encode("utf-8")) for lab in labels) + (int(seed),)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])
