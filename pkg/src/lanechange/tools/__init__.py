"""Standalone helper commands."""
