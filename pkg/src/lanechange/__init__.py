"""Learned lane-change decisions executed by a tracking MPC in replay."""
