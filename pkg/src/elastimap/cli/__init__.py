"""Config-driven command line: run experiments, export fields, render reports."""

from .config import ConfigError, RunConfig, StudyConfig, load_config, parse_config
from .export import ExportError, export_field, read_field_csv, read_field_pgm
from .main import main
from .runner import RunReport, cmd_beta_study, cmd_cluster_study, cmd_run

__all__ = [
    "ConfigError",
    "ExportError",
    "RunConfig",
    "RunReport",
    "StudyConfig",
    "cmd_beta_study",
    "cmd_cluster_study",
    "cmd_run",
    "export_field",
    "load_config",
    "main",
    "parse_config",
    "read_field_csv",
    "read_field_pgm",
]
