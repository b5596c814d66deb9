"""Benchmark driver: serial oracle, verification, metrics and the CLI."""

from .bench import (CSV_COLUMNS, ConfigError, Metrics, RunConfig, collect_metrics, emit_report,
                    parse_nested, parse_strategy, read_report, run_benchmark)
from .oracle import OracleResult, VerifyReport, engine_result, serial_oracle, verify

__all__ = ["CSV_COLUMNS", "ConfigError", "Metrics", "RunConfig", "collect_metrics", "emit_report",
           "parse_nested", "parse_strategy", "read_report", "run_benchmark", "OracleResult",
           "VerifyReport", "engine_result", "serial_oracle", "verify"]
