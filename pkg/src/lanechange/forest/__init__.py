"""Random-forest lane-change classifier."""
