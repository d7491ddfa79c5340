"""Closed-loop replay simulation, comparison and sensitivity analysis."""
