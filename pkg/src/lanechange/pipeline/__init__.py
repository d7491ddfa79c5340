"""Subcommands chaining the pipeline stages."""
