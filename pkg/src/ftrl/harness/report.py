"""Markdown and CSV reports folded from the RunRecords of a run directory.

Tables put datasets in preset order with MSE before MAE. The best value of
each column is set in bold (lowest error, highest return) and cells whose
run failed or is missing show ``n/a`` instead of a number. Every cell of a
per-run table names the record it came from in ``tables.csv``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .records import RunRecord, load_records

ABSENT = "n/a"
METRICS = ("mse", "mae")


class ReportError(ValueError):
    pass


@dataclass
class Table:
    title: str
    row_header: str
    rows: list[str]
    columns: list[tuple[str, str]]                      # (group, metric)
    cells: dict[tuple[str, tuple[str, str]], tuple[float, str]] = field(default_factory=dict)
    higher_is_better: bool = False
    text: dict[tuple[str, tuple[str, str]], str] = field(default_factory=dict)

    def value(self, row: str, col: tuple[str, str]) -> float | None:
        hit = self.cells.get((row, col))
        return None if hit is None or not math.isfinite(hit[0]) else hit[0]

    def best(self, col: tuple[str, str]) -> float | None:
        vals = [v for v in (self.value(r, col) for r in self.rows) if v is not None]
        if not vals:
            return None
        return max(vals) if self.higher_is_better else min(vals)

    def to_markdown(self) -> str:
        heads = [self.row_header] + [f"{g} {m.upper()}" if g else m for g, m in self.columns]
        lines = [f"### {self.title}", "", "| " + " | ".join(heads) + " |",
                 "|" + "|".join(["---"] + ["---:"] * len(self.columns)) + "|"]
        for r in self.rows:
            out = [r]
            for c in self.columns:
                if (r, c) in self.text:
                    out.append(self.text[(r, c)])
                    continue
                v = self.value(r, c)
                if v is None:
                    out.append(ABSENT)
                elif v == self.best(c):
                    out.append(f"**{v:.4f}**")
                else:
                    out.append(f"{v:.4f}")
            lines.append("| " + " | ".join(out) + " |")
        return "\n".join(lines) + "\n"

    def long_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            for c in self.columns:
                hit = self.cells.get((r, c))
                v = self.value(r, c)
                out.append({"table": self.title, "row": r, "group": c[0], "metric": c[1],
                            "value": "" if v is None else repr(v), "best": v is not None and v == self.best(c),
                            "run_id": hit[1] if hit else ""})
        return out


def _ok(rec: RunRecord | None) -> bool:
    return rec is not None and rec.status == "ok"


def _metric_columns(names: list[str]) -> list[tuple[str, str]]:
    return [(n, m) for n in names for m in METRICS]


def _fill(table: Table, row: str, rec: RunRecord | None, key: str, group: str) -> None:
    if not _ok(rec) or key not in rec.reports:
        return
    for m in METRICS:
        table.cells[(row, (group, m))] = (float(rec.reports[key][m]), rec.run_id)


def transfer_tables(records: list[RunRecord]) -> list[Table]:
    spec = records[0].spec["harness"]
    presets, algos = spec["presets"], spec["algorithms"]
    tables = []
    for seed in sorted({r.seed for r in records}):
        pre = {r.cell["preset"]: r for r in records if r.kind == "pretrain" and r.seed == seed}
        ft = {(r.cell["algorithm"], r.cell["train"], r.cell["target"]): r
              for r in records if r.kind == "finetune" and r.seed == seed}
        rows = [f"pre-trained on {p}" for p in presets]
        base = Table(f"Transfer baseline, no fine-tuning (seed {seed})", "model", rows, _metric_columns(presets))
        for p, row in zip(presets, rows):
            for q in presets:
                _fill(base, row, pre.get(p), f"test/{q}", q)
        tables.append(base)
        for a in algos:
            t = Table(f"Transfer after {a.upper()} fine-tuning on the column's dataset (seed {seed})", "model",
                      rows, _metric_columns(presets))
            for p, row in zip(presets, rows):
                for q in presets:
                    _fill(t, row, ft.get((a, p, q)), f"after/{q}", q)
            tables.append(t)
    return tables


def _ft_label(rec: RunRecord) -> str:
    f = rec.history.get("finetune") or {}
    cfg = rec.spec["finetune"]
    algo = rec.cell["algorithm"]
    paradigm = f.get("paradigm", cfg["paradigm"])
    frozen = f.get("frozen_fraction", cfg["frozen_fraction"])
    return f"{algo.upper()} {paradigm}, {frozen:.0%} frozen, seed {rec.seed}"


def finetune_tables(records: list[RunRecord]) -> list[Table]:
    recs = [r for r in records if r.kind == "finetune"]
    names = list(dict.fromkeys(n for r in recs for n in r.cell["eval"]))
    rows = [_ft_label(r) for r in recs]
    before = Table("Before fine-tuning", "run", rows, _metric_columns(names))
    after = Table("After fine-tuning", "run", rows, _metric_columns(names))
    for r, row in zip(recs, rows):
        for n in names:
            _fill(before, row, r, f"before/{n}", n)
            _fill(after, row, r, f"after/{n}", n)
    return [before, after]


def pretrain_tables(records: list[RunRecord]) -> list[Table]:
    recs = [r for r in records if r.kind == "pretrain"]
    names = list(dict.fromkeys(n for r in recs for n in r.cell["eval"]))
    rows = [f"{r.cell['preset']}, seed {r.seed}" for r in recs]
    t = Table("Pre-training test error", "run", rows, _metric_columns(names))
    for r, row in zip(recs, rows):
        for n in names:
            _fill(t, row, r, f"test/{n}", n)
    return [t]


def sweep_tables(records: list[RunRecord]) -> list[Table]:
    recs = [r for r in records if r.kind == "finetune"]
    param = recs[0].spec["harness"]["sweep_param"]
    target = recs[0].cell["target"]
    rows = [f"{param}={r.cell['overrides'][param]}, seed {r.seed}" for r in recs]
    t = Table(f"Sweep over {param}", "run", rows, _metric_columns([target]))
    for r, row in zip(recs, rows):
        _fill(t, row, r, f"after/{target}", target)
    return [t]


def bench_summary(records: list[RunRecord]) -> list[dict]:
    """Mean and std of the final return per algorithm; diverged or failed
    runs are left out of the mean and counted."""
    by_algo: dict[str, list[RunRecord]] = defaultdict(list)
    for r in records:
        if r.kind == "bench":
            by_algo[r.cell["algorithm"]].append(r)
    out = []
    for algo, recs in by_algo.items():
        good = [r.reports["return"]["final_return"] for r in recs if _ok(r)]
        good = [v for v in good if math.isfinite(v)]
        out.append({"algorithm": algo, "env": recs[0].cell["env"],
                    "mean": float(np.mean(good)) if good else float("nan"),
                    "std": float(np.std(good)) if good else float("nan"),
                    "runs": len(recs), "excluded": len(recs) - len(good),
                    "run_ids": [r.run_id for r in recs]})
    return out


def bench_tables(records: list[RunRecord]) -> list[Table]:
    summary = bench_summary(records)
    env = summary[0]["env"] if summary else ""
    rows = [s["algorithm"] for s in summary]
    col, spread, flag = ("", "mean return"), ("", "std"), ("", "runs excluded")
    t = Table(f"Final episodic return on {env} (higher is better)", "algorithm", rows, [col, spread, flag],
              higher_is_better=True)
    for s in summary:
        ids = ";".join(s["run_ids"])
        if math.isfinite(s["mean"]):
            t.cells[(s["algorithm"], col)] = (s["mean"], ids)
            t.text[(s["algorithm"], spread)] = f"± {s['std']:.2f}"
        t.text[(s["algorithm"], flag)] = f"{s['excluded']} of {s['runs']}" + (" (diverged)" if s["excluded"] else "")
    return [t]


BUILDERS = {"transfer": transfer_tables, "finetune": finetune_tables, "pretrain": pretrain_tables,
            "sweep": sweep_tables, "bench": bench_tables}


def build_tables(records: list[RunRecord]) -> list[Table]:
    groups: dict[str, list[RunRecord]] = defaultdict(list)
    for r in records:
        groups[r.experiment].append(r)
    tables = []
    for kind in BUILDERS:
        if groups.get(kind):
            tables.extend(BUILDERS[kind](groups[kind]))
    return tables


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def emit_report(run_dir: str | Path) -> dict[str, Path]:
    """Write report.md, tables.csv and the plot-data CSVs into ``run_dir``."""
    run_dir = Path(run_dir)
    records = load_records(run_dir)
    if not records:
        raise ReportError(f"no run records under {run_dir}")
    tables = build_tables(records)
    parts = ["# Run report", ""]
    parts += [t.to_markdown() for t in tables]
    parts += ["### Runs", "", "| run | status | seconds | note |", "|---|---|---:|---|"]
    for r in records:
        parts.append(f"| {r.run_id} | {r.status} | {r.wall_clock:.1f} | {r.error or ''} |")
    paths = {"report": run_dir / "report.md", "tables": run_dir / "tables.csv",
             "curves": run_dir / "curves.csv", "rewards": run_dir / "rewards.csv"}
    paths["report"].write_text("\n".join(parts) + "\n", encoding="utf-8")
    _write_csv(paths["tables"], ["table", "row", "group", "metric", "value", "best", "run_id"],
               [row for t in tables for row in t.long_rows()])
    curves, rewards = [], []
    for r in records:
        for s in r.history.get("snapshots", []):
            curves.append({"run_id": r.run_id, **s})
        for step, value in r.history.get("rewards", r.history.get("curve", [])):
            rewards.append({"run_id": r.run_id, "step": step, "value": value})
    _write_csv(paths["curves"], ["run_id", "timestep", "mean_reward", "val_mse", "val_mae"], curves)
    _write_csv(paths["rewards"], ["run_id", "step", "value"], rewards)
    sweeps = [r for r in records if r.experiment == "sweep" and r.kind == "finetune"]
    if sweeps:
        param = sweeps[0].spec["harness"]["sweep_param"]
        rows = []
        for r in sweeps:
            rep = r.reports.get(f"after/{r.cell['target']}", {}) if _ok(r) else {}
            rows.append({"param": param, "value": r.cell["overrides"][param], "seed": r.seed,
                         "mse": rep.get("mse", ""), "mae": rep.get("mae", ""), "status": r.status,
                         "run_id": r.run_id})
        paths["sweep"] = run_dir / "sweep.csv"
        _write_csv(paths["sweep"], ["param", "value", "seed", "mse", "mae", "status", "run_id"], rows)
    return paths
