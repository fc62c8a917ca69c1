"""Experiment harness: file-driven configuration, run directories with
manifests and delimited outputs, figure rendering, and the CLI."""
