"""Operator command line over the collector and metrics service."""

from .main import build_parser, main
from .render import PathStep, bar, critical_path, render_table, waterfall

__all__ = ["PathStep", "bar", "build_parser", "critical_path", "main", "render_table", "waterfall"]
