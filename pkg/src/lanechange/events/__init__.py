"""Lane-change detection, exclusion rules and balanced labeling."""
