"""``ftrl`` command line.

Exit codes: 0 success, 2 invalid input, 3 one or more runs failed,
4 a rerun did not reproduce its record, 1 anything else. On failure the
last line on stderr is ``ftrl-error: {json}`` with ``code``, ``type`` and
``message`` keys.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from ..numerics import ContractError
from .config import ExperimentSpec, load_config
from .records import RunRecord
from .report import ReportError, bench_summary, emit_report
from .runners import rerun, run_bench, run_finetune, run_pretrain, run_sweep, run_transfer_matrix

INVALID, RUN_FAILED, NOT_REPRODUCED, OTHER = 2, 3, 4, 1


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="store_true", help="log run progress")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field (repeatable)")
    p.add_argument("--seed", type=int, help="single run seed")
    p.add_argument("--seeds", help="comma-separated run seeds")
    p.add_argument("--master-seed", type=int, help="master seed for per-run seed derivation")
    p.add_argument("--out", help="run directory (default: harness.out_dir)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ftrl", description="RL fine-tuning of time-series forecasters")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pre-train a backbone and save a checkpoint")
    _common(p)
    p.add_argument("--preset")
    p.add_argument("--csv", help="price CSV instead of a synthetic preset")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("finetune", help="pre-train (or load) a backbone and fine-tune it")
    _common(p)
    p.add_argument("--algo", choices=("ppo", "cmappo", "grpo"))
    p.add_argument("--paradigm", choices=("actor", "latent"))
    p.add_argument("--frozen", type=float)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--preset", help="pre-training dataset")
    p.add_argument("--target", help="fine-tuning dataset")
    p.add_argument("--csv")
    p.add_argument("--backbone", help="checkpoint to fine-tune instead of pre-training")

    p = sub.add_parser("transfer", help="pre-train x fine-tune transfer matrix")
    _common(p)
    p.add_argument("--presets", type=_csv_list)
    p.add_argument("--algos", type=_csv_list)
    p.add_argument("--timesteps", type=int)

    p = sub.add_parser("sweep", help="one-parameter fine-tuning sweep")
    _common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, type=lambda s: [yaml.safe_load(v) for v in _csv_list(s)])
    p.add_argument("--algo", choices=("ppo", "cmappo", "grpo"))
    p.add_argument("--preset")
    p.add_argument("--target")

    p = sub.add_parser("bench", help="control-environment benchmark")
    _common(p)
    p.add_argument("--env", choices=("line-racer", "stick-balance"))
    p.add_argument("--algos", type=_csv_list)
    p.add_argument("--timesteps", type=int)

    p = sub.add_parser("report", help="render tables from a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("rerun", help="re-execute a persisted run record")
    p.add_argument("--record", required=True)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _spec(args) -> ExperimentSpec:
    sets = list(args.set)
    flags = {
        "seeds": args.seeds and f"harness.seeds=[{args.seeds}]",
        "seed": args.seed is not None and f"harness.seeds=[{args.seed}]",
        "master_seed": args.master_seed is not None and f"harness.master_seed={args.master_seed}",
    }
    opt = vars(args)
    mapping = {
        "preset": "data.preset", "csv": "data.csv", "target": "data.target", "epochs": "pretrain.epochs",
        "algo": "algorithm.name", "paradigm": "finetune.paradigm", "frozen": "finetune.frozen_fraction",
        "timesteps": "finetune.total_timesteps" if args.command != "bench" else "bench.timesteps",
        "backbone": "harness.backbone_path", "env": "bench.env",
    }
    for key, path in mapping.items():
        if opt.get(key) is not None:
            sets.append(f"{path}={json.dumps(opt[key])}")
    if opt.get("presets"):
        sets.append(f"harness.presets={json.dumps(opt['presets'])}")
    if opt.get("algos"):
        sets.append(f"harness.algorithms={json.dumps(opt['algos'])}")
    sets += [v for v in flags.values() if v]
    sets.append(f"harness.kind={args.command}")
    return load_config(args.config, sets)


def _check_runs(records) -> None:
    failed = [r.run_id for r in records if r.status == "failed"]
    if failed:
        raise CommandError(RUN_FAILED, f"{len(failed)} of {len(records)} runs failed: {', '.join(failed)}")


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "report":
            paths = emit_report(args.run_dir)
            print(paths["report"].read_text(encoding="utf-8"))
            return 0
        if args.command == "rerun":
            rec = RunRecord.load(args.record)
            new, same = rerun(rec, args.out)
            print(json.dumps({"run_id": new.run_id, "status": new.status, "reproduced": same,
                              "reports": new.reports}, indent=1))
            if not same:
                raise CommandError(NOT_REPRODUCED, f"rerun of {rec.run_id} differs from its record")
            return 0
        spec = _spec(args)
        out = Path(args.out or spec.harness.out_dir)
        if args.command == "pretrain":
            records = run_pretrain(spec, out)
        elif args.command == "finetune":
            records = run_finetune(spec, out)
        elif args.command == "transfer":
            records = run_transfer_matrix(spec, out_dir=out)
        elif args.command == "sweep":
            records = run_sweep(spec, args.param, args.values, out_dir=out)
        else:
            records = run_bench(spec, out_dir=out)
        paths = emit_report(out)
        if args.command == "bench":
            for s in bench_summary(records):
                print(f"{s['algorithm']:>8}: {s['mean']:.2f} ± {s['std']:.2f} ({s['excluded']} excluded)")
        print(f"{len(records)} run(s); report at {paths['report']}")
        _check_runs(records)
        return 0
    except CommandError as exc:
        return _fail(exc.code, "RunError" if exc.code == RUN_FAILED else "NotReproduced", str(exc))
    except (ContractError, ReportError, ValueError, KeyError, yaml.YAMLError, FileNotFoundError) as exc:
        return _fail(INVALID, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable line
        return _fail(OTHER, type(exc).__name__, str(exc))


def _fail(code: int, kind: str, message: str) -> int:
    print("ftrl-error: " + json.dumps({"code": code, "type": kind, "message": message}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
