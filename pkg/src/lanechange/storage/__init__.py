"""Artifact files shared by the pipeline stages."""
