"""CLI orchestration: configs, masks, experiment grid, file emission."""

from .config import ExperimentConfig, parse_config, parse_config_text
from .masks import generate_mask
from .outputs import dump_structure, emit_plotdata, read_matrix_csv, write_matrix_csv
from .runner import ResultBundle, run_cell, run_experiment, simulate_truth_files

__all__ = [
    "ExperimentConfig",
    "ResultBundle",
    "dump_structure",
    "emit_plotdata",
    "generate_mask",
    "parse_config",
    "parse_config_text",
    "read_matrix_csv",
    "run_cell",
    "run_experiment",
    "simulate_truth_files",
    "write_matrix_csv",
]
