from .config import (
    KINDS,
    SEED_SCHEME,
    SWEEP_PARAMS,
    AlgorithmSection,
    BenchSection,
    DataSection,
    ExperimentSpec,
    FinetuneSection,
    HarnessSection,
    PretrainSection,
    dump_config,
    load_config,
    run_seed,
)
from .records import RunRecord, code_version, load_records
from .report import ABSENT, ReportError, Table, bench_summary, build_tables, emit_report
from .runners import (
    RANDOM,
    check_sweep,
    execute_cell,
    load_dataset,
    rerun,
    run_bench,
    run_experiment,
    run_finetune,
    run_pretrain,
    run_sweep,
    run_transfer_matrix,
    transfer_cells,
)

__all__ = [
    "ABSENT", "AlgorithmSection", "BenchSection", "DataSection", "ExperimentSpec", "FinetuneSection",
    "HarnessSection", "KINDS", "PretrainSection", "RANDOM", "ReportError", "RunRecord", "SEED_SCHEME",
    "SWEEP_PARAMS", "Table", "bench_summary", "build_tables", "check_sweep", "code_version", "dump_config",
    "emit_report", "execute_cell", "load_config", "load_dataset", "load_records", "rerun", "run_bench",
    "run_experiment", "run_finetune", "run_pretrain", "run_seed", "run_sweep", "run_transfer_matrix",
    "transfer_cells",
]
