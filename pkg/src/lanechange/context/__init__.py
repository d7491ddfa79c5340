"""Neighbor identification and decision features."""
