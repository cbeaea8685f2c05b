from __future__ import annotations

import csv
from pathlib import Path

STAT_COLUMNS = ("step", "episodic_return", "mean_reward", "policy_loss", "value_loss", "loss", "entropy",
                "clip_fraction", "kl", "status")


def write_stats_csv(rows: list[dict], path: str | Path, columns=STAT_COLUMNS) -> None:
    """One row per update; missing fields are left empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})
