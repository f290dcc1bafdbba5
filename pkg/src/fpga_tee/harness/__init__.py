"""Traces, workload presets, scenario runner, calibration and the CLI."""
