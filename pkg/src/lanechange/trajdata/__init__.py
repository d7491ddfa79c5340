"""Trajectory ingestion, smoothing, road geometry and scene snapshots."""
