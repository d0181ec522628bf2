from .config import RunConfig, config_hash, load_config, parse_config_text, serialize_config
from .checkpoints import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .reports import ReportError, emit_report, read_csv, write_csv
from .bench import bench_depths, compare_backends, linear_fit
from .cli import main, run_command

__all__ = [
    "RunConfig", "config_hash", "load_config", "parse_config_text", "serialize_config",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ReportError", "emit_report", "read_csv", "write_csv",
    "bench_depths", "compare_backends", "linear_fit",
    "main", "run_command",
]
