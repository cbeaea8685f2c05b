"""Persisted run records.

Each run is one JSON file holding the resolved experiment config, the cell
it ran, its seeds, code version, timings, history and final metrics. The
config snapshot plus the cell and seed are enough to execute the run again.
"""

from __future__ import annotations

import json
import re
import subprocess
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

RECORD_DIR = "records"


@dataclass
class RunRecord:
    run_id: str
    experiment: str                 # kind of the experiment that produced the run
    kind: str                       # what the cell did: pretrain, finetune or bench
    cell: dict[str, Any]
    seed: int
    run_seed: int
    spec: dict[str, Any]
    code_version: str
    started: str = ""
    wall_clock: float = 0.0
    history: dict[str, Any] = field(default_factory=dict)
    reports: dict[str, dict[str, Any]] = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    seed_scheme: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def save(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / RECORD_DIR / f"{self.run_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def load_records(run_dir: str | Path) -> list[RunRecord]:
    run_dir = Path(run_dir)
    folder = run_dir / RECORD_DIR
    if not folder.is_dir():
        return []
    return [RunRecord.load(p) for p in sorted(folder.glob("*.json"))]


def run_id(kind: str, labels: list[str], seed: int) -> str:
    raw = "-".join([kind, *[str(x) for x in labels], f"s{seed}"])
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", raw)


def code_version() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        desc = out.stdout.strip()
        if desc:
            return f"git:{desc}"
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return f"artifact {metadata.version('artifact')}"
    except metadata.PackageNotFoundError:
        return "unknown"
